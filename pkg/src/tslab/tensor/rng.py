"""Seeded random streams.

Every stochastic choice in tslab (weight init, shuffling, clip sampling)
draws from an :class:`RngState`. The bit generator is numpy's Philox4x64-10,
a counter-based generator whose raw output depends only on ``(key, counter)``
and is therefore identical on every platform. Child streams are derived by
hashing ``(seed, *path)`` through :class:`numpy.random.SeedSequence`, so a
clip's randomness depends on its index and not on generation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "philox4x64-10"


@dataclass
class RngState:
    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ss = np.random.SeedSequence([self.seed, *self.path])
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *path: int) -> "RngState":
        """Independent stream keyed by ``path`` (does not advance this one)."""
        return RngState(self.seed, self.path + tuple(int(p) for p in path))

    # thin pass-throughs used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)
