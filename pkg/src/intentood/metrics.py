"""Threshold-free OOD detection metrics.

OOD is the positive class throughout: callers pass *detection* scores where
larger means "more OOD" (``1 - max softmax``). Everything is computed in
float64.
"""

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np


def _as_scores(pos, neg):
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("metrics need nonempty positive and negative score lists")
    return pos, neg


def _average_ranks(x):
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auroc(pos, neg):
    """P(random positive outranks random negative), ties counting 1/2."""
    pos, neg = _as_scores(pos, neg)
    ranks = _average_ranks(np.concatenate([pos, neg]))
    n_pos, n_neg = pos.size, neg.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _tie_blocks(pos, neg):
    """Cumulative TP/FP counts at each distinct threshold, highest first."""
    scores = np.concatenate([pos, neg])
    is_pos = np.r_[np.ones(pos.size), np.zeros(neg.size)]
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    tp = np.cumsum(is_pos[order])
    fp = np.cumsum(1.0 - is_pos[order])
    last = np.r_[s[1:] != s[:-1], True]  # final index of each tie block
    return s[last], tp[last], fp[last]


def aupr(pos, neg, orientation="ood"):
    """Average precision, sum over distinct thresholds of dRecall * Precision.

    ``orientation="ood"`` treats ``pos`` as positives (as given);
    ``orientation="ind"`` makes the negatives the positive class and flips the
    score direction.
    """
    pos, neg = _as_scores(pos, neg)
    if orientation == "ind":
        pos, neg = -neg, -pos
    elif orientation != "ood":
        raise ValueError(f"orientation must be 'ood' or 'ind', got {orientation!r}")
    _, tp, fp = _tie_blocks(pos, neg)
    # counts are integers, so accumulate exactly and round once
    tp, fp = tp.astype(np.int64).tolist(), fp.astype(np.int64).tolist()
    total, prev = Fraction(0), 0
    for t, f in zip(tp, fp):
        if t != prev:
            total += Fraction((t - prev) * t, t + f)
            prev = t
    return float(total / pos.size)


def fpr_at_tpr(pos, neg, level=0.95):
    """Smallest FPR over thresholds whose TPR reaches ``level``."""
    pos, neg = _as_scores(pos, neg)
    _, tp, fp = _tie_blocks(pos, neg)
    tpr = tp / pos.size
    fpr = fp / neg.size
    ok = tpr >= level
    # tpr and fpr are nondecreasing as the threshold drops; the first block
    # reaching the level has the smallest fpr
    return float(fpr[np.argmax(ok)])


@dataclass(frozen=True)
class MetricBlock:
    auroc: float
    aupr_ood_positive: float
    aupr_ind_positive: float
    fpr_at_95tpr: float
    fpr_at_90tpr: float

    def to_dict(self):
        raw = asdict(self)
        return {
            "percent": {k: round(100.0 * v, 2) for k, v in raw.items()},
            "raw": raw,
        }


def metric_block(scoreset):
    """All five metrics from a :class:`~intentood.detector.ScoreSet`."""
    pos = 1.0 - np.asarray(scoreset.ood_scores, dtype=np.float64)
    neg = 1.0 - np.asarray(scoreset.ind_scores, dtype=np.float64)
    return MetricBlock(
        auroc=auroc(pos, neg),
        aupr_ood_positive=aupr(pos, neg, "ood"),
        aupr_ind_positive=aupr(pos, neg, "ind"),
        fpr_at_95tpr=fpr_at_tpr(pos, neg, 0.95),
        fpr_at_90tpr=fpr_at_tpr(pos, neg, 0.90),
    )
