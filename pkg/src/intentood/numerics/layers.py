"""Differentiable layers with explicit backward passes.

Each layer caches what it needs during ``forward`` and consumes that cache in
``backward(dy)``, which returns the input gradient and *adds* parameter
gradients into the owning :class:`ParamStore`. Models compose layers in a
fixed order and call ``backward`` in reverse.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _fan_in_uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


class Embedding:
    def __init__(self, store, name, vocab_size, dim, rng, pad_id=0, init_scale=0.08):
        table = rng.uniform((vocab_size, dim), -init_scale, init_scale)
        table[pad_id] = 0.0
        self.table = store.add(f"{name}.weight", table)
        frozen = np.zeros(self.table.value.shape, dtype=bool)
        frozen[pad_id] = True
        self.table.frozen = frozen
        self.pad_id = pad_id

    def forward(self, ids):
        ids = np.asarray(ids)
        v = self.table.value.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= v):
            raise IndexError(f"token id out of range for vocabulary of size {v}")
        self.ids = ids
        self.keep = (ids != self.pad_id)[..., None]
        return self.table.value[ids] * self.keep

    def backward(self, dy):
        d = (dy * self.keep).reshape(-1, dy.shape[-1])
        np.add.at(self.table.grad, self.ids.reshape(-1), d)
        self.table.grad[self.pad_id] = 0.0


class Affine:
    """``y = x @ W + b`` over the last axis."""

    def __init__(self, store, name, n_in, n_out, rng):
        self.w = store.add(f"{name}.weight", _fan_in_uniform(rng, n_in, (n_in, n_out)))
        self.b = store.add(f"{name}.bias", np.zeros(n_out))

    def forward(self, x):
        if x.shape[-1] != self.w.value.shape[0]:
            raise ShapeError(f"affine expects last dim {self.w.value.shape[0]}, got {x.shape}")
        self.x = x.reshape(-1, x.shape[-1])
        return (self.x @ self.w.value + self.b.value).reshape(*x.shape[:-1], -1)

    def backward(self, dy):
        d2 = dy.reshape(-1, dy.shape[-1])
        self.w.grad += self.x.T @ d2
        self.b.grad += d2.sum(axis=0)
        return (d2 @ self.w.value.T).reshape(*dy.shape[:-1], -1)


class Conv1d:
    """Valid 1-D convolution over token positions.

    Input ``[B, L, d]``, output ``[B, L - width + 1, filters]``.
    """

    def __init__(self, store, name, in_dim, width, filters, rng):
        self.width = width
        fan_in = width * in_dim
        self.w = store.add(f"{name}.weight", _fan_in_uniform(rng, fan_in, (fan_in, filters)))
        self.b = store.add(f"{name}.bias", np.zeros(filters))

    def forward(self, x):
        b, length, d = x.shape
        if length < self.width:
            raise ShapeError(f"sequence length {length} shorter than filter width {self.width}")
        # windows: [B, T, d, w] -> [B, T, w*d] with position-major layout
        t = length - self.width + 1
        win = sliding_window_view(x, self.width, axis=1).transpose(0, 1, 3, 2)
        self.cols = np.ascontiguousarray(win).reshape(b * t, self.width * d)
        self.in_shape = x.shape
        return (self.cols @ self.w.value + self.b.value).reshape(b, t, -1)

    def backward(self, dy):
        b, t, f = dy.shape
        d = self.in_shape[2]
        dy2 = dy.reshape(b * t, f)
        self.w.grad += self.cols.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        dcols = (dy2 @ self.w.value.T).reshape(b, t, self.width, d)
        dx = np.zeros(self.in_shape, dtype=dy.dtype)
        for i in range(self.width):
            dx[:, i : i + t] += dcols[:, :, i]
        return dx


class MaxOverTime:
    def forward(self, x):
        self.shape = x.shape
        self.arg = x.argmax(axis=1)
        return np.take_along_axis(x, self.arg[:, None, :], axis=1)[:, 0]

    def backward(self, dy):
        dx = np.zeros(self.shape, dtype=dy.dtype)
        np.put_along_axis(dx, self.arg[:, None, :], dy[:, None, :], axis=1)
        return dx


class MaskedMean:
    """Mean over the first ``lengths[i]`` positions; divides by ``max(len, 1)``."""

    def forward(self, x, lengths):
        length = x.shape[1]
        lengths = np.asarray(lengths)
        self.mask = (np.arange(length)[None, :] < lengths[:, None]).astype(x.dtype)[..., None]
        self.denom = np.maximum(lengths, 1).astype(x.dtype)[:, None]
        return (x * self.mask).sum(axis=1) / self.denom

    def backward(self, dy):
        return (dy / self.denom)[:, None, :] * self.mask


class Tanh:
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, dy):
        return dy * (1.0 - self.y * self.y)


class Relu:
    def forward(self, x):
        self.pos = x > 0
        return x * self.pos

    def backward(self, dy):
        return dy * self.pos


class Dropout:
    """Inverted dropout; active only when an Rng is passed to ``forward``."""

    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, rng=None):
        if rng is None or self.rate == 0.0:
            self.scale = None
            return x
        keep = rng.uniform(x.shape) >= self.rate
        self.scale = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self.scale

    def backward(self, dy):
        return dy if self.scale is None else dy * self.scale


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GRUCell:
    """Standard gated recurrent cell::

        r = sigmoid(x Wr + h Ur + br)
        z = sigmoid(x Wz + h Uz + bz)
        n = tanh(x Wn + bn + r * (h Un + bhn))
        h' = (1 - z) * n + z * h

    ``forward`` may be called repeatedly (one call per time step); ``backward``
    must then be called in reverse step order.
    """

    def __init__(self, store, name, n_in, n_hidden, rng):
        self.h = n_hidden
        self.wx = store.add(f"{name}.wx", _fan_in_uniform(rng, n_hidden, (n_in, 3 * n_hidden)))
        self.wh = store.add(f"{name}.wh", _fan_in_uniform(rng, n_hidden, (n_hidden, 3 * n_hidden)))
        self.bx = store.add(f"{name}.bx", np.zeros(3 * n_hidden))
        self.bh = store.add(f"{name}.bh", np.zeros(3 * n_hidden))
        self.cache = []

    def reset(self):
        self.cache = []

    def forward(self, x, h):
        n_h = self.h
        gx = x @ self.wx.value + self.bx.value
        gh = h @ self.wh.value + self.bh.value
        r = _sigmoid(gx[:, :n_h] + gh[:, :n_h])
        z = _sigmoid(gx[:, n_h : 2 * n_h] + gh[:, n_h : 2 * n_h])
        hn = gh[:, 2 * n_h :]
        n = np.tanh(gx[:, 2 * n_h :] + r * hn)
        self.cache.append((x, h, r, z, n, hn))
        return (1.0 - z) * n + z * h

    def backward(self, dh_next):
        """Backprop one step; returns ``(dx, dh_prev)``."""
        x, h, r, z, n, hn = self.cache.pop()
        dn = dh_next * (1.0 - z)
        dz = dh_next * (h - n)
        dh = dh_next * z
        dan = dn * (1.0 - n * n)
        dr = dan * hn
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        self.wx.grad += x.T @ dgx
        self.bx.grad += dgx.sum(axis=0)
        self.wh.grad += h.T @ dgh
        self.bh.grad += dgh.sum(axis=0)
        return dgx @ self.wx.value.T, dh + dgh @ self.wh.value.T


class Sequential:
    """Layers applied in order; ``Dropout`` members receive the rng."""

    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x, rng=None):
        for layer in self.layers:
            x = layer.forward(x, rng) if isinstance(layer, Dropout) else layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
