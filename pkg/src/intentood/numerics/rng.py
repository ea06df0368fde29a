"""Seeded SplitMix64 generator.

The integer stream is defined purely by 64-bit wrapping arithmetic, so the same
seed yields the same sequence on every platform::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Floats take the top 53 bits of each output. Normals use Box-Muller.
"""

import hashlib

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def u64(self, n):
        """Next ``n`` raw outputs as a uint64 array."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def uniform(self, shape=(), low=0.0, high=1.0):
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=()):
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u1 = 1.0 - self.uniform(half)  # (0, 1]
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def permutation(self, n):
        return np.argsort(self.u64(n), kind="stable")

    def integers(self, high, size):
        """Uniform ints in ``[0, high)``."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def child(self, name):
        """Independent stream keyed by ``name``; does not advance this one."""
        digest = hashlib.sha256(f"{self.state}:{name}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))
