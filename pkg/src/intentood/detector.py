"""Max-softmax OOD scoring and thresholded decisions."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import softmax

IND = "IND"
OOD = "OOD"

_BOUNDARY_STEP = 1e-9


@dataclass(frozen=True)
class Threshold:
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.eta}")


def max_softmax(logits):
    """Row-wise max of the softmax, computed in float64."""
    return softmax(np.asarray(logits, dtype=np.float64)).max(axis=-1)


def score_batch(model, ids, lengths, batch_size=512):
    return max_softmax(model.predict_logits(ids, lengths, batch_size=batch_size))


def score(model, ids, length):
    """Max-softmax score of a single encoded sequence."""
    return float(score_batch(model, np.asarray(ids)[None, :], np.asarray([length]))[0])


def detect(s, threshold):
    """OOD iff the score is strictly below the threshold."""
    eta = threshold.eta if isinstance(threshold, Threshold) else threshold
    return OOD if s < eta else IND


def select_threshold(ood_scores, target_tpr):
    """Smallest-scale threshold that flags at least ``target_tpr`` of the OOD set.

    With ascending scores ``s_1..s_n`` and ``m = ceil(target_tpr * n)``, any
    eta > s_m reaches the target and no eta <= s_m does. Eta is placed halfway
    between s_m and the next larger distinct score, or ``s_m + 1e-9`` when
    s_m is the maximum.
    """
    s = np.sort(np.asarray(ood_scores, dtype=np.float64))
    if s.size == 0:
        raise ValueError("cannot select a threshold from an empty score list")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError(f"target_tpr must lie in (0, 1], got {target_tpr}")
    m = max(1, math.ceil(target_tpr * s.size - 1e-9))
    anchor = s[m - 1]
    above = s[s > anchor]
    eta = (anchor + above[0]) / 2.0 if above.size else anchor + _BOUNDARY_STEP
    return Threshold(float(eta))


@dataclass
class ScoreSet:
    ind_scores: list = field(default_factory=list)
    ood_scores: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["split", "score"])
            for name, values in (("ind", self.ind_scores), ("ood", self.ood_scores)):
                for v in values:
                    w.writerow([name, repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                target = out.ind_scores if row["split"] == "ind" else out.ood_scores
                target.append(float(row["score"]))
        return out
