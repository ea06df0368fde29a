"""K-way intent classifier and its entropy-regularized training loop."""

import csv
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import OOS, PAD_ID
from .errors import ConfigError, NumericError
from .numerics import (
    Adam,
    Affine,
    Conv1d,
    Dropout,
    Embedding,
    MaskedMean,
    MaxOverTime,
    ParamStore,
    Relu,
    Rng,
    cross_entropy,
    neg_entropy,
)

log = logging.getLogger(__name__)

ARCHS = ("cnn", "mean-pool-mlp")


@dataclass
class ClassifierConfig:
    arch: str = "cnn"
    embed_dim: int = 100
    widths: tuple = (3, 4, 5)
    filters: int = 100
    hidden: int = 256
    dropout: float = 0.5

    def validate(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        dims = [self.embed_dim, self.filters, self.hidden, *self.widths]
        if min(dims) <= 0:
            raise ConfigError("classifier dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    beta: float = 1.0
    seed: int = 0
    patience: int = 5

    def validate(self):
        if self.beta < 0:
            raise ConfigError("entropy weight beta must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("lr, batch_size, epochs and patience must be positive")


class TextClassifier:
    """Embedding -> (CNN max-pool | masked-mean MLP) -> dropout -> affine head."""

    def __init__(self, cfg, vocab_size, num_classes, rng, dtype=np.float32):
        cfg.validate()
        if num_classes < 2:
            raise ConfigError("classifier needs K >= 2")
        self.cfg = cfg
        self.K = num_classes
        self.vocab_size = vocab_size
        self.params = ParamStore(dtype)
        init = rng.child("init")
        self.embed = Embedding(self.params, "embed", vocab_size, cfg.embed_dim, init)
        if cfg.arch == "cnn":
            self.min_len = max(cfg.widths)
            self.convs = [
                Conv1d(self.params, f"conv{w}", cfg.embed_dim, w, cfg.filters, init)
                for w in cfg.widths
            ]
            self.relus = [Relu() for _ in cfg.widths]
            self.pools = [MaxOverTime() for _ in cfg.widths]
            feat = cfg.filters * len(cfg.widths)
        else:
            self.min_len = 1
            self.mean = MaskedMean()
            self.hidden = Affine(self.params, "hidden", cfg.embed_dim, cfg.hidden, init)
            self.act = Relu()
            feat = cfg.hidden
        self.drop = Dropout(cfg.dropout)
        self.head = Affine(self.params, "head", feat, num_classes, init)

    def forward(self, ids, lengths, rng=None):
        """Logits ``[B, K]``; dropout is active only when ``rng`` is given."""
        ids = np.asarray(ids)
        if ids.shape[0] == 0:
            raise ValueError("forward needs a nonempty batch")
        if ids.shape[1] < self.min_len:
            pad = np.full((ids.shape[0], self.min_len - ids.shape[1]), PAD_ID, ids.dtype)
            ids = np.concatenate([ids, pad], axis=1)
        x = self.embed.forward(ids)
        if self.cfg.arch == "cnn":
            feats = [
                pool.forward(relu.forward(conv.forward(x)))
                for conv, relu, pool in zip(self.convs, self.relus, self.pools)
            ]
            h = np.concatenate(feats, axis=1)
        else:
            h = self.act.forward(self.hidden.forward(self.mean.forward(x, lengths)))
        return self.head.forward(self.drop.forward(h, rng))

    def backward(self, dlogits):
        dh = self.drop.backward(self.head.backward(dlogits.astype(self.params.dtype)))
        if self.cfg.arch == "cnn":
            f = self.cfg.filters
            dx = 0
            for i, (conv, relu, pool) in enumerate(zip(self.convs, self.relus, self.pools)):
                dx = dx + conv.backward(relu.backward(pool.backward(dh[:, i * f : (i + 1) * f])))
        else:
            dx = self.mean.backward(self.hidden.backward(self.act.backward(dh)))
        self.embed.backward(dx)

    def predict_logits(self, ids, lengths, batch_size=512):
        out = [
            self.forward(ids[i : i + batch_size], lengths[i : i + batch_size])
            for i in range(0, len(ids), batch_size)
        ]
        return np.concatenate(out, axis=0)


def loss_eq1(logits_ind, labels, logits_ood, beta=1.0, return_grad=False):
    """Cross-entropy on the IND batch plus ``beta * mean(-H)`` on the OOD batch.

    An empty OOD batch returns the cross-entropy unchanged.
    """
    if len(logits_ind) < 1:
        raise ValueError("loss needs at least one IND example")
    ce = cross_entropy(logits_ind, labels, return_grad=return_grad)
    if logits_ood is None or len(logits_ood) == 0:
        return (ce[0], ce[1], None) if return_grad else ce
    ne = neg_entropy(logits_ood, return_grad=return_grad)
    if not return_grad:
        return ce + beta * ne
    return ce[0] + beta * ne[0], ce[1], beta * ne[1]


def ind_accuracy(model, split, batch_size=512):
    """Fraction of examples whose argmax (lowest id on ties) matches the label."""
    if len(split) == 0:
        raise ValueError("accuracy is undefined on an empty split")
    if np.any(split.labels == OOS):
        raise ValueError("ind_accuracy received out-of-scope examples")
    pred = model.predict_logits(split.ids, split.lengths, batch_size).argmax(axis=1)
    return float(np.mean(pred == split.labels))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    dev_acc: float
    loss: float
    ood_entropy: float


class TrainLog(list):
    """One :class:`EpochRecord` per completed epoch."""

    COLUMNS = ("epoch", "train_acc", "dev_acc", "loss", "ood_entropy")

    def to_rows(self):
        return [asdict(r) for r in self]

    def to_csv(self, path):
        if not self:
            raise ValueError("cannot emit curves for an empty training log")
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])


def _cycle_batches(n, size, rng):
    """Endless stream of index batches, reshuffling on every pass."""
    order, pos = rng.permutation(n), 0
    while True:
        idx = []
        while len(idx) < size:
            take = order[pos : pos + size - len(idx)]
            idx.extend(take.tolist())
            pos += len(take)
            if pos >= n:
                order, pos = rng.permutation(n), 0
        yield np.asarray(idx)


def train(model, train_split, dev_split, ood_split, cfg, on_step=None):
    """Train under the entropy-regularized loss; returns ``(TrainLog, best_state)``.

    Each step draws one IND minibatch and, when ``ood_split`` is nonempty, an
    OOD minibatch of the same size. IND shuffling, OOD cycling and the two
    dropout streams come from independent child rngs, so the IND schedule
    does not depend on whether OOD data is present. The model is left holding
    the best-dev-accuracy parameters.
    """
    cfg.validate()
    if len(train_split) == 0:
        raise ValueError("training split is empty")
    rng = Rng(cfg.seed)
    shuffle_rng = rng.child("ind-shuffle")
    ood_rng = rng.child("ood-cycle")
    drop_ind, drop_ood = rng.child("dropout-ind"), rng.child("dropout-ood")
    has_ood = ood_split is not None and len(ood_split) > 0
    has_dev = dev_split is not None and len(dev_split) > 0
    opt = Adam(model.params, lr=cfg.lr)
    ood_batches = None

    log_ = TrainLog()
    best_state, best_dev, stale = model.params.state_dict(), -math.inf, 0
    n = len(train_split)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses, entropies = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = train_split.take(idx)
            model.params.zero_grad()
            logits = model.forward(batch.ids, batch.lengths, drop_ind)
            ood_idx = None
            if has_ood:
                if ood_batches is None:
                    ood_batches = _cycle_batches(len(ood_split), cfg.batch_size, ood_rng)
                ood_idx = next(ood_batches)[: len(idx)]
                # IND pass first so its cached activations are consumed before
                # the OOD forward overwrites them
                ce, dl = cross_entropy(logits, batch.labels, return_grad=True)
                model.backward(dl)
                ood = ood_split.take(ood_idx)
                logits_ood = model.forward(ood.ids, ood.lengths, drop_ood)
                ne, dn = neg_entropy(logits_ood, return_grad=True)
                if cfg.beta != 0.0:
                    model.backward(cfg.beta * dn)
                loss = ce + cfg.beta * ne
                entropies.append(-ne)
            else:
                loss, dl, _ = loss_eq1(logits, batch.labels, None, cfg.beta, return_grad=True)
                model.backward(dl)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            opt.step()
            losses.append(loss)
            if on_step is not None:
                on_step(idx, ood_idx)

        train_acc = ind_accuracy(model, train_split)
        dev_acc = ind_accuracy(model, dev_split) if has_dev else math.nan
        record = EpochRecord(
            epoch=epoch,
            train_acc=train_acc,
            dev_acc=dev_acc,
            loss=float(np.mean(losses)),
            ood_entropy=float(np.mean(entropies)) if entropies else math.nan,
        )
        log_.append(record)
        log.info("epoch %d train_acc=%.4f dev_acc=%.4f loss=%.4f", epoch, train_acc, dev_acc,
                 record.loss)

        if not has_dev:
            best_state = model.params.state_dict()
            continue
        if dev_acc > best_dev:
            best_dev, stale = dev_acc, 0
            best_state = model.params.state_dict()
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop after %d epochs without dev improvement", stale)
                break
    model.params.load_state_dict(best_state)
    return log_, best_state
