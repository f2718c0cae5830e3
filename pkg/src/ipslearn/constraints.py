"""Constraint estimators for policy learning.

Four constraint families: demographic parity and equal opportunity (group
fairness of the assignment probabilities), a budget cap on the average
assignment rate, and a floor on a weighted quantile of the realized outcomes.
Each is exposed both as a plain metric and, through ``constraint_residual``,
in the standardized "g <= 0" form the optimizer consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset

__all__ = [
    "ConstraintSpec",
    "dp_metric",
    "eo_metric",
    "budget_metric",
    "weighted_quantile",
    "quantile_constraint",
    "constraint_residual",
]

CONSTRAINT_KINDS = ("none", "dp", "eo", "budget", "quantile")


@dataclass(frozen=True)
class ConstraintSpec:
    """One policy constraint.

    kind "dp"/"eo"/"budget" bound their metric above by ``threshold``; kind
    "quantile" bounds the tau-quantile of the realized outcome below by
    ``threshold``. The quantile level and the fairness/budget bound are
    deliberately separate fields (the two roles are unrelated).
    """

    kind: str = "none"
    threshold: float = 0.0
    quantile_tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not np.isfinite(self.threshold):
            raise ValueError("constraint threshold must be finite")
        if self.kind == "quantile":
            if self.quantile_tau is None or not 0.0 < self.quantile_tau < 1.0:
                raise ValueError("quantile constraint needs quantile_tau in (0,1)")
        elif self.quantile_tau is not None:
            raise ValueError("quantile_tau only applies to the quantile kind")

    @property
    def is_active(self) -> bool:
        return self.kind != "none"

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "threshold": self.threshold}
        if self.quantile_tau is not None:
            obj["quantile_tau"] = self.quantile_tau
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintSpec":
        return cls(
            kind=obj.get("kind", "none"),
            threshold=float(obj.get("threshold", 0.0)),
            quantile_tau=obj.get("quantile_tau"),
        )


def dp_metric(d_vals: np.ndarray, S: np.ndarray) -> float:
    """Root-sum-of-squares deviation of group mean assignment from the overall mean."""
    d_vals = np.asarray(d_vals, dtype=np.float64)
    S = np.asarray(S, dtype=np.int64)
    overall = d_vals.mean()
    total = 0.0
    for s in np.unique(S):
        mask = S == s
        total += (d_vals[mask].mean() - overall) ** 2
    return float(np.sqrt(total))


def eo_metric(d_vals: np.ndarray, S: np.ndarray, A: np.ndarray) -> float:
    """Like dp_metric but computed within the treated units only.

    Raises if some group has no treated unit: silently dropping the group
    would change what the metric measures.
    """
    d_vals = np.asarray(d_vals, dtype=np.float64)
    S = np.asarray(S, dtype=np.int64)
    A = np.asarray(A)
    treated = A == 1
    if not treated.any():
        raise ValueError("no treated units")
    overall = d_vals[treated].mean()
    total = 0.0
    for s in np.unique(S):
        cell = treated & (S == s)
        if not cell.any():
            raise ValueError(f"group {int(s)} has no treated units")
        total += (d_vals[cell].mean() - overall) ** 2
    return float(np.sqrt(total))


def budget_metric(d_vals: np.ndarray) -> float:
    """Average assignment rate."""
    return float(np.asarray(d_vals, dtype=np.float64).mean())


def weighted_quantile(Y: np.ndarray, weights: np.ndarray, tau: float) -> float:
    """Smallest minimizer of the weighted pinball loss sum_i c_i * rho_tau(Y_i - q).

    Computed as the weighted order statistic: with Y sorted ascending, the
    first value whose cumulative weight reaches tau times the total weight.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be inside (0,1)")
    Y = np.asarray(Y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if Y.shape != w.shape:
        raise ValueError("Y and weights must have the same length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("all weights are zero")
    order = np.argsort(Y, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, tau * total, side="left"))
    k = min(k, Y.shape[0] - 1)
    return float(Y[order][k])


def quantile_constraint(ds: Dataset, d_vals: np.ndarray, tau: float) -> float:
    """Estimated tau-quantile of the outcome realized under the policy.

    Units whose observed treatment agrees with the policy carry weight d (if
    treated) or 1-d (if untreated); a policy that contradicts every observed
    treatment leaves no usable units and raises.
    """
    d_vals = np.asarray(d_vals, dtype=np.float64)
    c = ds.A * d_vals + (1 - ds.A) * (1.0 - d_vals)
    if c.sum() <= 0.0:
        raise ValueError("degenerate weights: policy disagrees with every observed treatment")
    return weighted_quantile(ds.Y, c, tau)


def constraint_residual(spec: ConstraintSpec, ds: Dataset, d_vals: np.ndarray) -> float:
    """Standardized residual g with the convention that g <= 0 means feasible."""
    if spec.kind == "none":
        return float("-inf")
    if spec.kind == "dp":
        if ds.S is None:
            raise ValueError("dp constraint needs a sensitive attribute")
        return dp_metric(d_vals, ds.S) - spec.threshold
    if spec.kind == "eo":
        if ds.S is None:
            raise ValueError("eo constraint needs a sensitive attribute")
        return eo_metric(d_vals, ds.S, ds.A) - spec.threshold
    if spec.kind == "budget":
        return budget_metric(d_vals) - spec.threshold
    if spec.kind == "quantile":
        return spec.threshold - quantile_constraint(ds, d_vals, spec.quantile_tau)
    raise AssertionError(spec.kind)
