"""Deterministic, splittable random number generation.

All stochastic code in the package draws from counter-based Philox
generators keyed by a user seed plus integer stream indices, so path i
under seed s is reproducible no matter how work is batched or
parallelised.
"""

from __future__ import annotations

import numpy as np


def derived_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for a (seed, stream...) key.

    Distinct stream tuples give statistically independent generators;
    the same tuple always gives the same stream.
    """
    seed = int(seed)
    if seed < 0:
        seed &= (1 << 64) - 1
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
