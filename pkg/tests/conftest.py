"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from ipslearn.data import Dataset
from ipslearn.nuisance import NuisanceFit


def toy_dataset(n: int = 100, seed: int = 0, with_groups: bool = True,
                p: int = 2, y_loc: float = 2.0) -> Dataset:
    """Small random dataset; outcome mean kept away from zero so relative
    error assertions are meaningful."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    A = (rng.random(n) < 0.5).astype(float)
    if A.sum() == 0:
        A[0] = 1.0
    elif A.sum() == n:
        A[0] = 0.0
    Y = rng.normal(y_loc, 1.0, n)
    S = None
    if with_groups and n >= 2:
        S = (rng.random(n) < 0.5).astype(int)
        S[0], S[1] = 0, 1  # both groups always present
    return Dataset(X=X, A=A, Y=Y, S=S)


def garbage_nuisance(seed: int = 0, scale: float = 5.0) -> NuisanceFit:
    """Deterministic pseudo-random nuisance functions unrelated to any truth.

    Pure functions of the covariates (not stateful), so repeated prediction
    is reproducible; values are nonsense by construction.
    """
    rng = np.random.default_rng(seed)
    w_pi = rng.normal(size=8)
    w_m0 = rng.normal(size=8)
    w_m1 = rng.normal(size=8)

    def _mix(ds, w):
        z = np.zeros(ds.n)
        for j in range(ds.p):
            z += w[j % 8] * np.sin((j + 1) * ds.X[:, j] + w[(j + 3) % 8])
        return z

    return NuisanceFit.from_functions(
        lambda ds: 0.5 + 0.5 * np.sin(_mix(ds, w_pi)),
        lambda ds: scale * np.cos(_mix(ds, w_m0)),
        lambda ds: scale * np.sin(_mix(ds, w_m1) + 1.0),
    )


def constant_nuisance(pi: float, mu0: float, mu1: float) -> NuisanceFit:
    return NuisanceFit.from_functions(
        lambda ds: np.full(ds.n, pi),
        lambda ds: np.full(ds.n, mu0),
        lambda ds: np.full(ds.n, mu1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
