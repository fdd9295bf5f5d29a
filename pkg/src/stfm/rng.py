"""Deterministic random number generation.

All randomness flows through :class:`Rng`, a thin wrapper around numpy's
PCG64 (a documented counter-based permuted congruential generator).  The
same seed yields the same stream on every run and platform.  Independent
child streams for parallel workers are derived from (seed, index) via
``SeedSequence`` spawn keys, so worker layout never changes the streams.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._ss))

    def child(self, index: int) -> "Rng":
        """Independent stream derived deterministically from (seed, index)."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(index),))
        return Rng(self.seed, _ss=ss)

    # Thin passthroughs, so call sites read like numpy.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def dirichlet(self, alpha, size=None):
        return self._gen.dirichlet(alpha, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, p=None):
        return self._gen.choice(a, size=size, p=p)
