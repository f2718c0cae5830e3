"""Stochastic incremental propensity score policies and linear decision rules.

An incremental policy multiplies each unit's treatment odds by a positive
factor delta(x) and treats with the resulting probability

    d(x) = delta(x) * pi(x) / (delta(x) * pi(x) + 1 - pi(x)),

which is well defined for every propensity in [0, 1]: units with pi = 0 are
never treated and units with pi = 1 always are, regardless of delta. The
linear-rule policy is the usual deterministic indicator of a linear score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import DataError, Dataset

__all__ = [
    "FeatureMap",
    "IncrementalPolicy",
    "LinearRulePolicy",
    "ips_prob",
    "implied_odds_ratio",
    "eval_incremental",
    "eval_linear",
    "policy_from_json",
]


@dataclass(frozen=True)
class FeatureMap:
    """Builds the policy feature row for each unit.

    Default layout is an intercept, then the group code (when present and
    requested), then the raw covariates.
    """

    intercept: bool = True
    include_sensitive: bool = True
    covariates: Optional[tuple[str, ...]] = None

    def rows(self, ds: Dataset) -> np.ndarray:
        cols = []
        if self.intercept:
            cols.append(np.ones(ds.n))
        if self.include_sensitive and ds.S is not None:
            cols.append(ds.S.astype(np.float64))
        names = self.covariates if self.covariates is not None else ds.column_names
        for name in names:
            cols.append(ds.column(name))
        return np.column_stack(cols)

    def dim(self, ds: Dataset) -> int:
        q = int(self.intercept) + int(self.include_sensitive and ds.S is not None)
        names = self.covariates if self.covariates is not None else ds.column_names
        return q + len(names)

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "include_sensitive": self.include_sensitive,
            "covariates": None if self.covariates is None else list(self.covariates),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureMap":
        cov = obj.get("covariates")
        return cls(
            intercept=bool(obj.get("intercept", True)),
            include_sensitive=bool(obj.get("include_sensitive", True)),
            covariates=None if cov is None else tuple(cov),
        )


def _check_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("propensity outside [0,1]")
    return pi


def ips_prob(delta, pi) -> Union[float, np.ndarray]:
    """Treatment probability after multiplying the odds of pi by delta.

    Scalar or elementwise on arrays. Exact at the boundaries: returns 0 when
    pi == 0 and 1 when pi == 1, for any positive delta.
    """
    delta_arr = np.asarray(delta, dtype=np.float64)
    if np.any(delta_arr <= 0.0) or not np.all(np.isfinite(delta_arr)):
        raise ValueError("delta must be strictly positive and finite")
    pi_arr = _check_pi(pi)
    dp = delta_arr * pi_arr
    out = dp / (dp + (1.0 - pi_arr))
    if np.isscalar(delta) and np.isscalar(pi):
        return float(out)
    return out


def implied_odds_ratio(d, pi) -> Union[float, np.ndarray]:
    """The delta that ips_prob would map back to d; both inputs in (0,1)."""
    d_arr = np.asarray(d, dtype=np.float64)
    pi_arr = np.asarray(pi, dtype=np.float64)
    if np.any(d_arr <= 0.0) or np.any(d_arr >= 1.0):
        raise ValueError("d must be strictly inside (0,1)")
    if np.any(pi_arr <= 0.0) or np.any(pi_arr >= 1.0):
        raise ValueError("pi must be strictly inside (0,1)")
    out = (d_arr / (1.0 - d_arr)) / (pi_arr / (1.0 - pi_arr))
    if np.isscalar(d) and np.isscalar(pi):
        return float(out)
    return out


@dataclass(frozen=True)
class IncrementalPolicy:
    """Incremental policy with log-linear odds multiplier.

    delta(x) = exp(clip(features(x) . beta, -delta_cap, +delta_cap)); the cap
    keeps the multiplier bounded, which the estimators' theory assumes.
    """

    beta: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    delta_cap: float = 30.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise ValueError("beta must be a finite vector")
        if self.delta_cap <= 0:
            raise ValueError("delta_cap must be positive")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    def log_delta(self, ds: Dataset) -> np.ndarray:
        scores = self.feature_map.rows(ds) @ self.beta
        return np.clip(scores, -self.delta_cap, self.delta_cap)

    def delta(self, ds: Dataset) -> np.ndarray:
        return np.exp(self.log_delta(ds))

    def to_json(self) -> dict:
        return {
            "kind": "ips",
            "beta": [float(b) for b in self.beta],
            "feature_map": self.feature_map.to_json(),
            "delta_cap": self.delta_cap,
        }


@dataclass(frozen=True)
class LinearRulePolicy:
    """Deterministic rule I{features(x) . beta > 0} with unit-norm beta."""

    beta: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap)

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        norm = float(np.linalg.norm(beta))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("beta must be a nonzero finite vector")
        beta = beta / norm
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    def to_json(self) -> dict:
        return {
            "kind": "linear",
            "beta": [float(b) for b in self.beta],
            "feature_map": self.feature_map.to_json(),
        }


def policy_from_json(obj: dict):
    kind = obj.get("kind")
    fm = FeatureMap.from_json(obj.get("feature_map", {}))
    if kind == "ips":
        return IncrementalPolicy(beta=np.asarray(obj["beta"]), feature_map=fm,
                                 delta_cap=float(obj.get("delta_cap", 30.0)))
    if kind == "linear":
        return LinearRulePolicy(beta=np.asarray(obj["beta"]), feature_map=fm)
    raise ValueError(f"unknown policy kind {kind!r}")


def eval_incremental(policy: IncrementalPolicy, nuis, ds: Dataset) -> np.ndarray:
    """Per-unit treatment probabilities of the policy under nuis's propensity."""
    rows = policy.feature_map.rows(ds)
    if rows.shape[1] != policy.beta.shape[0]:
        raise DataError(
            f"feature dimension {rows.shape[1]} does not match beta length {policy.beta.shape[0]}"
        )
    delta = np.exp(np.clip(rows @ policy.beta, -policy.delta_cap, policy.delta_cap))
    return ips_prob(delta, nuis.pi(ds))


def eval_linear(policy: LinearRulePolicy, ds: Dataset) -> np.ndarray:
    """Deterministic assignments in {0,1}; a score of exactly 0 maps to 0."""
    rows = policy.feature_map.rows(ds)
    if rows.shape[1] != policy.beta.shape[0]:
        raise DataError(
            f"feature dimension {rows.shape[1]} does not match beta length {policy.beta.shape[0]}"
        )
    return (rows @ policy.beta > 0.0).astype(np.float64)
