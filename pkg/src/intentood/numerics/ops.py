"""Stateless tensor ops and losses.

Losses return ``(value, grad)`` when ``return_grad=True``; ``grad`` is the
derivative of the mean loss w.r.t. the logits.
"""

import numpy as np

from ..errors import NumericError, ShapeError


def check_finite(x, where="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {where}")
    return x


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_softmax(logits):
    logits = check_finite(np.asarray(logits), "logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    logits = check_finite(np.asarray(logits), "logits")
    if logits.shape[-1] < 1:
        raise ShapeError("softmax needs at least one class")
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels, return_grad=False):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    if not return_grad:
        return float(loss)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def entropy(probs, tol=1e-5):
    """Mean Shannon entropy (nats) of the rows of ``probs``; 0 log 0 = 0."""
    probs = check_finite(np.asarray(probs, dtype=np.float64), "probs")
    if np.any(probs < -tol) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > tol):
        raise ValueError("rows of probs must be probability distributions")
    p = np.clip(probs, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(-terms.sum(axis=-1).mean())


def neg_entropy(logits, return_grad=False):
    """Mean of ``-H(softmax(logits))`` over rows.

    Gradient per row is ``p * (log p - sum(p log p))``.
    """
    logits = np.asarray(logits)
    n = logits.shape[0]
    logp = log_softmax(logits)
    p = np.exp(logp)
    plogp = (p * logp).sum(axis=-1, keepdims=True)
    value = float(plogp.mean())
    if not return_grad:
        return value
    return value, p * (logp - plogp) / n


def bce_with_logits(logits, target, return_grad=False):
    """Mean binary cross-entropy against a constant 0/1 ``target``."""
    x = check_finite(np.asarray(logits), "logits")
    # -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
    z = -x if target else x
    loss = np.logaddexp(0.0, z).mean()
    if not return_grad:
        return float(loss)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return float(loss), (sig - target) / x.size
