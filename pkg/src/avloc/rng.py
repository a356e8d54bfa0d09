"""Deterministic random streams.

Every random draw in the package flows through :class:`Rng` so that a run is a
pure function of its seed.  The generator is PCG64, whose output is stable
across platforms for a fixed seed; shuffling is an explicit Fisher-Yates so the
permutation depends only on the integer stream, never on library-internal
shuffle changes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng"]


class Rng:
    """Seeded random stream with derivable child streams.

    Identical seed + identical call sequence produces an identical output
    sequence on every platform.  Child streams (``derive``) are independent
    of the parent's consumption state: they are keyed purely by integers,
    which is what makes per-instance / per-epoch parallel generation
    reproducible.
    """

    def __init__(self, seed: int, *key: int):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.seed, *self.key)))
        )

    def derive(self, *key: int) -> "Rng":
        """Child stream keyed by (seed, *self.key, *key); parent state unchanged."""
        return Rng(self.seed, *self.key, *key)

    def draw_uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        """Uniform draws in [low, high); scalar when shape is None."""
        if shape is None:
            return float(self._gen.uniform(low, high))
        return self._gen.uniform(low, high, size=shape).astype(np.float64)

    def draw_normal(self, shape=None, loc: float = 0.0, scale: float = 1.0):
        if shape is None:
            return float(self._gen.normal(loc, scale))
        return self._gen.normal(loc, scale, size=shape).astype(np.float64)

    def draw_int(self, low: int, high: int) -> int:
        """One integer in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        return int(self._gen.integers(low, high))

    def shuffle(self, items):
        """Return a shuffled list (Fisher-Yates over the integer stream)."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = int(self._gen.integers(0, i + 1))
            out[i], out[j] = out[j], out[i]
        return out

    def choose_without_replacement(self, n: int, m: int) -> np.ndarray:
        """m distinct indices from 0..n-1, in draw order.

        Partial Fisher-Yates: the first m entries of a full shuffle, without
        paying for the rest.
        """
        if m > n:
            raise ValueError(f"cannot choose {m} distinct indices from {n}")
        if m < 0:
            raise ValueError("m must be non-negative")
        pool = np.arange(n)
        for i in range(m):
            j = i + int(self._gen.integers(0, n - i))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:m].copy()
