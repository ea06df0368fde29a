"""Dense numerics substrate: ops, layers, parameters, optimizer, RNG."""

from .gradcheck import finite_diff_check
from .layers import (
    Affine,
    Conv1d,
    Dropout,
    Embedding,
    GRUCell,
    MaskedMean,
    MaxOverTime,
    Relu,
    Sequential,
    Tanh,
)
from .ops import (
    bce_with_logits,
    check_finite,
    cross_entropy,
    entropy,
    log_softmax,
    matmul,
    neg_entropy,
    softmax,
)
from .params import Adam, Param, ParamStore, load_checkpoint, save_checkpoint
from .rng import Rng

__all__ = [
    "Adam", "Affine", "Conv1d", "Dropout", "Embedding", "GRUCell", "MaskedMean",
    "MaxOverTime", "Param", "ParamStore", "Relu", "Rng", "Sequential", "Tanh",
    "bce_with_logits", "check_finite", "cross_entropy", "entropy",
    "finite_diff_check", "load_checkpoint", "log_softmax", "matmul",
    "neg_entropy", "save_checkpoint", "softmax",
]
