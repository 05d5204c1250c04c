"""Counter-based splittable PRNG with named streams.

Every source of randomness in the toolkit is a `Stream` derived from one
master seed plus a chain of names ("init", "attack", "data", "shapes", ...).
Streams are stateless apart from a draw counter, so adding a new consumer
never perturbs the values any other stream produces, and results are
reproducible across platforms (no dependence on numpy's global state).

The generator is SplitMix64: state_i = key + i * GOLDEN (mod 2^64), output =
finalizer(state_i). The finalizer is the standard triple xor-shift/multiply.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wraparound intended)."""
    with np.errstate(over="ignore"):
        x = x.astype(np.uint64, copy=True)
        x ^= x >> np.uint64(30)
        x *= _MIX1
        x ^= x >> np.uint64(27)
        x *= _MIX2
        x ^= x >> np.uint64(31)
    return x


def _hash_name(name: str) -> np.uint64:
    """FNV-1a over the utf-8 bytes of a stream name."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in name.encode("utf-8"):
            h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


class Stream:
    """One named random stream: a 64-bit key plus a draw counter.

    `child(name)` derives an independent stream; drawing from the child
    never advances the parent.
    """

    def __init__(self, seed: int, name: str = "root"):
        with np.errstate(over="ignore"):
            key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + _hash_name(name)
        self.key = _mix64(np.asarray([key], dtype=np.uint64))[0]
        self.name = name
        self.counter = 0

    def child(self, name: str) -> "Stream":
        s = Stream.__new__(Stream)
        with np.errstate(over="ignore"):
            s.key = _mix64(np.asarray([self.key + _hash_name(name)], dtype=np.uint64))[0]
        s.name = f"{self.name}/{name}"
        s.counter = 0
        return s

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.key + idx * _GOLDEN)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform floats in [lo, hi), float64."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian samples via Box-Muller (always consumes 2n raws)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u1 = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1], avoids log(0)
        z = r * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    def integers(self, n: int, lo: int, hi: int) -> np.ndarray:
        """n integers in [lo, hi); uses rejection-free modulo (hi-lo << 2^64)."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        span = np.uint64(hi - lo)
        return (lo + (self._raw(n) % span).astype(np.int64)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        if n > 1:
            raws = self._raw(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(raws[n - 1 - i] % np.uint64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm
