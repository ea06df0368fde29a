"""Named parameters with paired gradients, the Adam optimizer, and the JSON
checkpoint format."""

import json
from collections import OrderedDict

import numpy as np

from ..errors import ShapeError

CHECKPOINT_FORMAT = "intentood-checkpoint"
CHECKPOINT_VERSION = 1


class Param:
    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name, value):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        # boolean mask of entries excluded from training (e.g. the PAD row)
        self.frozen = None


class ParamStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(name, np.ascontiguousarray(value, dtype=self.dtype))
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self:
            p.grad[...] = 0.0

    def state_dict(self):
        return OrderedDict((p.name, p.value.copy()) for p in self)

    def load_state_dict(self, state):
        for name, value in state.items():
            p = self._params[name]
            if p.value.shape != np.shape(value):
                raise ShapeError(f"{name}: shape {np.shape(value)} != {p.value.shape}")
            p.value[...] = value

    def num_parameters(self):
        return sum(p.value.size for p in self)


class Adam:
    """Bias-corrected Adam over the (optionally named subset of) parameters."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        self.params = [store[n] for n in names] if names is not None else list(store)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if p.frozen is not None:
                g = np.where(p.frozen, 0.0, g).astype(g.dtype)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(path, store, meta=None):
    """Write ``store`` as JSON: a list of (name, shape, values) records."""
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": store.dtype.name,
        "meta": meta or {},
        "params": [
            {"name": p.name, "shape": list(p.value.shape), "values": p.value.ravel().tolist()}
            for p in store
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f)


def load_checkpoint(path):
    """Return ``(state, meta)`` where ``state`` maps names to arrays."""
    with open(path, encoding="utf-8") as f:
        record = json.load(f)
    if record.get("format") != CHECKPOINT_FORMAT or record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    dtype = np.dtype(record["dtype"])
    state = OrderedDict(
        (e["name"], np.asarray(e["values"], dtype=dtype).reshape(e["shape"]))
        for e in record["params"]
    )
    return state, record["meta"]
