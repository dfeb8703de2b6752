"""SplitMix64 streams keyed by integer tuples.

Bulk draws are vectorised over the counter, so a stream of a million normals
costs a few numpy passes rather than a Python loop.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(*parts: int) -> int:
    """Fold a tuple of non-negative integers into one 64-bit seed."""
    h = 0
    for p in parts:
        h = mix64((h ^ (int(p) & MASK)) + GAMMA)
    return h


class SplitMix64:
    """Counter-based SplitMix64 generator.

    The i-th output is ``mix64(seed + (i + 1) * GAMMA)``, which is what the
    sequential algorithm produces, so scalar and vector draws interleave
    consistently.
    """

    def __init__(self, seed: int, *keys: int):
        self.seed = derive_seed(seed, *keys) if keys else int(seed) & MASK
        self.counter = 0

    @classmethod
    def keyed(cls, *parts: int) -> "SplitMix64":
        return cls(derive_seed(*parts))

    def next_u64(self, size: int | None = None):
        if size is None:
            self.counter += 1
            return mix64(self.seed + self.counter * GAMMA)
        idx = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix64_array(z)

    def uniform(self, size: int | tuple | None = None, low: float = 0.0, high: float = 1.0):
        """Uniform draws on [low, high) with 53-bit resolution."""
        if size is None:
            u = (self.next_u64() >> 11) * 2.0**-53
            return low + (high - low) * u
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def integers(self, low: int, high: int, size=None):
        """Integers on [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(size)
        if size is None:
            return low + min(int(u * (high - low)), high - low - 1)
        return low + np.minimum((u * (high - low)).astype(np.int64), high - low - 1)

    def normal(self, size: int | tuple):
        """Standard normals via Box-Muller."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # stable sort keeps ties (never expected with 53-bit draws) deterministic
        return np.argsort(self.uniform(n), kind="stable")

    def bernoulli(self, p: float) -> bool:
        return bool(self.uniform() < p)
