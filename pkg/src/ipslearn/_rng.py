"""Deterministic random streams shared by the whole package.

Every stochastic component derives its generator from an integer seed plus a
tuple of integer path elements, so independent sub-computations (folds,
repetitions, optimizer restarts) get non-overlapping streams that do not
depend on scheduling order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_U53 = float(1 << 53)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, path)``; same inputs, same stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws strictly inside (0, 1), safe for inverse-CDF transforms."""
    return rng.integers(1, 1 << 53, size=size).astype(np.float64) / _U53


def normal_icdf(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normals via the inverse CDF of a uniform stream.

    Slower than ziggurat sampling but bit-reproducible for a fixed stream,
    independent of platform or generator internals beyond the raw uniforms.
    """
    return ndtri(open_uniform(rng, size))
