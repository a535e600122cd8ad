"""SplitMix64 pseudo-random generator.

All random fixtures in the package (tests, verify suites, benchmarks) draw
from this generator so that a seed fully determines every tensor, on every
platform and numpy version.

Algorithm (Steele, Lea & Flood 2014)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Uniform doubles in [0, 1) take the top 53 bits: ``(z >> 11) * 2**-53``.
Because the state advances by a fixed increment, a block of ``n`` outputs is
computed in one vectorized step.
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-style SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.state = self.seed & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=np.float64) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return (low + (high - low) * u).reshape(shape).astype(dtype)

    def normal(self, shape, scale: float = 1.0, dtype=np.float64) -> np.ndarray:
        # Box-Muller on two uniform blocks
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return (scale * z).reshape(shape).astype(dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in ``[low, high)``; modulo bias is below 2**-40 for the ranges used here."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = max(1, int(np.prod(shape, dtype=np.int64)))
        span = np.uint64(high - low)
        vals = (self.next_u64(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else vals[0]
