"""End-to-end experiment runner: ingest, optional pseudo-OOD generation,
training, scoring, metrics, and artifact emission."""

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import ClassifierConfig, TextClassifier, TrainConfig, ind_accuracy, train
from .corpus import build_vocab, encode_examples, encode_sequences, load_clinc
from .detector import ScoreSet, score_batch, select_threshold
from .errors import ConfigError
from .metrics import metric_block
from .numerics import Rng, save_checkpoint
from .pog import PogConfig, run_pog

log = logging.getLogger(__name__)

MODES = ("baseline", "entropy-oos", "entropy-pog")
TPR_LEVELS = (0.90, 0.95)


def _section(cls, raw, name):
    raw = dict(raw or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    if "widths" in raw:
        raw["widths"] = tuple(raw["widths"])
    return cls(**raw)


@dataclass
class ExperimentConfig:
    mode: str = "baseline"
    data: str = ""
    out: str = "runs/experiment"
    seed: int = 0
    max_len: int = 28
    min_freq: int = 1
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pog: PogConfig = field(default_factory=PogConfig)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"invalid mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if not self.data:
            raise ConfigError("no dataset path given")
        if self.max_len < 1 or self.min_freq < 1:
            raise ConfigError("max_len and min_freq must be >= 1")
        self.classifier.validate()
        self.train.validate()
        if self.mode == "entropy-pog":
            self.pog.validate()

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        nested = {
            "classifier": _section(ClassifierConfig, raw.pop("classifier", None), "classifier"),
            "train": _section(TrainConfig, raw.pop("train", None), "train"),
            "pog": _section(PogConfig, raw.pop("pog", None), "pog"),
        }
        top = _section(cls, raw, "experiment")
        return dataclasses.replace(top, **nested)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return dataclasses.asdict(self)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_curves(trainlog, path):
    """Write the per-epoch accuracy/loss curves as CSV."""
    trainlog.to_csv(path)


def run(config):
    """Run one experiment and write its artifacts; returns the report dict."""
    config.validate()
    started = time.perf_counter()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed
    train_cfg = dataclasses.replace(config.train, seed=seed)
    pog_cfg = dataclasses.replace(config.pog, seed=seed)

    bundle = load_clinc(config.data)
    vocab = build_vocab(bundle.train_ind, config.min_freq)
    vocab.save(out / "vocab.txt")
    enc = {
        name: encode_examples(getattr(bundle, name), vocab, config.max_len)
        for name in ("train_ind", "val_ind", "test_ind", "train_oos", "val_oos", "test_oos")
    }

    report = {
        "config": config.to_dict(),
        "dataset": {
            "path": str(config.data),
            "sha256": _sha256(config.data),
            "sizes": list(bundle.sizes()),
            "num_classes": bundle.K,
            "vocab_size": len(vocab),
        },
        "fallback_to_baseline": False,
    }

    ood_split = None
    if config.mode == "entropy-oos":
        ood_split = enc["train_oos"]
    elif config.mode == "entropy-pog":
        tokens = [ex.utterance.tokens for ex in bundle.train_ind]
        result = run_pog(enc["train_ind"], tokens, vocab, bundle.K, pog_cfg)
        with open(out / "pseudo_ood.txt", "w", encoding="utf-8") as f:
            f.writelines(" ".join(toks) + "\n" for toks in result.kept)
        with open(out / "rejections.json", "w", encoding="utf-8") as f:
            json.dump(result.rejections, f, indent=2)
        _write_adv_log(result.adv_log, out / "pog_log.csv")
        report["pog"] = _jsonable(result.summary())
        if result.kept:
            ood_split = encode_sequences(result.kept, vocab, config.max_len)
        else:
            log.warning("post-filter kept no pseudo-OOD samples; falling back to baseline training")
            report["fallback_to_baseline"] = True

    report["ood_source"] = {
        "kind": {"baseline": "none", "entropy-oos": "oos_train", "entropy-pog": "pseudo_ood"}[
            config.mode
        ],
        "size": 0 if ood_split is None else len(ood_split),
    }

    model = TextClassifier(config.classifier, len(vocab), bundle.K, Rng(seed))
    trainlog, _ = train(model, enc["train_ind"], enc["val_ind"], ood_split, train_cfg)
    emit_curves(trainlog, out / "curves.csv")
    save_checkpoint(out / "checkpoint.json", model.params,
                    meta={"mode": config.mode, "num_classes": bundle.K, "vocab_size": len(vocab)})

    def scores(name):
        split = enc[name]
        return score_batch(model, split.ids, split.lengths).tolist() if len(split) else []

    scoreset = ScoreSet(scores("test_ind"), scores("test_oos"))
    scoreset.to_csv(out / "scores.csv")
    report["train_log"] = _jsonable(trainlog.to_rows())
    report["dev_ind_accuracy"] = (
        ind_accuracy(model, enc["val_ind"]) if len(enc["val_ind"]) else None
    )
    report["test_ind_accuracy"] = (
        ind_accuracy(model, enc["test_ind"]) if len(enc["test_ind"]) else None
    )
    report["metrics"] = (
        metric_block(scoreset).to_dict()
        if scoreset.ind_scores and scoreset.ood_scores else None
    )
    report["thresholds"] = _thresholds(scores("val_oos"))
    report["wall_clock_seconds"] = round(time.perf_counter() - started, 3)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(_jsonable(report), f, indent=2)
        f.write("\n")
    return report


def _thresholds(val_ood_scores):
    """Eta selected on validation OOD scores at each TPR level; ``None`` when
    no valid threshold exists."""
    out = {}
    for level in TPR_LEVELS:
        key = f"tpr_{level:.2f}"
        try:
            out[key] = select_threshold(val_ood_scores, level).eta
        except ValueError:
            out[key] = None
    return out


def _write_adv_log(history, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        names = [fl.name for fl in dataclasses.fields(history[0])] if history else []
        w.writerow(names)
        for rec in history:
            w.writerow([repr(v) for v in dataclasses.astuple(rec)])


def load_report(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def compare(report_a, report_b):
    """Signed ``b - a`` differences in percentage points, IND accuracy first.

    Returns a list of ``(name, a, b, delta)`` rows.
    """
    da, db = report_a["dataset"]["sha256"], report_b["dataset"]["sha256"]
    if da != db:
        raise ValueError(f"reports were produced on different datasets ({da[:12]} vs {db[:12]})")

    def pct(report):
        acc = report.get("test_ind_accuracy")
        values = {"test_ind_accuracy": None if acc is None else round(100.0 * acc, 2)}
        values.update((report.get("metrics") or {}).get("percent", {}))
        return values

    a, b = pct(report_a), pct(report_b)
    rows = []
    for name in a:
        if a[name] is None or b.get(name) is None:
            continue
        rows.append((name, a[name], b[name], round(b[name] - a[name], 2)))
    return rows


def format_delta_table(rows):
    width = max(len(r[0]) for r in rows) if rows else 10
    lines = [f"{'metric':<{width}}  {'a':>8}  {'b':>8}  {'delta':>8}"]
    lines += [f"{n:<{width}}  {a:8.2f}  {b:8.2f}  {d:+8.2f}" for n, a, b, d in rows]
    return "\n".join(lines)
