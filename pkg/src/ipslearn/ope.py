"""Off-policy value estimators.

For incremental policies the common denominator D = delta*pi + 1 - pi is
bounded below by min(delta, 1) > 0, so the four IPS estimators never divide by
zero at any propensity in [0, 1] — this is the whole point of the method. The
per-unit uncentered influence values are

    xi = [A*delta*(Y - mu1) + (1-A)*(Y - mu0) + delta*pi*mu1 + (1-pi)*mu0] / D
         + delta*(mu1 - mu0)*(A - pi) / D**2,

whose sample mean is the one-step estimate; when delta == 1 the terms
telescope and xi reduces to Y identically, for arbitrary nuisance values.

The standard deterministic-policy baselines (outcome regression, IPW, AIPW)
are included for comparison. IPW and AIPW genuinely fail when some unit's
observed treatment matches the policy at an estimated propensity of exactly
zero; the failure is reported as data (``failed=True``), never masked by
trimming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import DataError, Dataset
from .nuisance import CrossFitNuisance, NuisanceFit
from .policy import IncrementalPolicy, LinearRulePolicy, eval_linear

__all__ = [
    "ESTIMATOR_TAGS",
    "ValueEstimate",
    "EifTerms",
    "value_or_ips",
    "value_ipw_ips",
    "eif_terms",
    "value_one_step",
    "value_cross_fit",
    "value_baselines",
]

ESTIMATOR_TAGS = ("OR_IPS", "IPW_IPS", "ONE_STEP", "CROSS_FIT",
                  "OR_STD", "IPW_STD", "AIPW_STD")

_Z95 = 1.959963984540054  # two-sided 95% normal quantile

CSV_HEADER = ("estimator", "value", "std_error", "ci_low", "ci_high", "n", "failed", "reason")


@dataclass(frozen=True)
class ValueEstimate:
    """Point estimate of a policy value, with normal CI when available."""

    value: float
    estimator: str
    n_used: int
    std_error: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    failed: bool = False
    failure_reason: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "estimator": self.estimator,
            "value": None if self.failed else self.value,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n": self.n_used,
            "failed": self.failed,
            "reason": self.failure_reason,
        }

    def to_csv_row(self) -> tuple:
        fmt = lambda v: "" if v is None else repr(float(v))
        return (
            self.estimator,
            "NA" if self.failed else repr(float(self.value)),
            fmt(self.std_error),
            fmt(self.ci_low),
            fmt(self.ci_high),
            str(self.n_used),
            str(self.failed).lower(),
            self.failure_reason or "",
        )


@dataclass(frozen=True)
class EifTerms:
    """Per-unit influence values and their three components."""

    xi: np.ndarray
    regression_residual: np.ndarray
    plug_in: np.ndarray
    propensity_correction: np.ndarray


def _mean(x: np.ndarray) -> float:
    # exact compensated summation: any parallel regrouping reproduces this
    return math.fsum(map(float, x)) / len(x)


def _with_ci(value: float, se: float, estimator: str, n: int) -> ValueEstimate:
    half = _Z95 * se
    return ValueEstimate(value=value, estimator=estimator, n_used=n, std_error=se,
                         ci_low=value - half, ci_high=value + half)


def _policy_inputs(ds: Dataset, policy: IncrementalPolicy, nuis: NuisanceFit):
    delta = policy.delta(ds)
    pi = nuis.pi(ds)
    return delta, pi, nuis.mu0(ds), nuis.mu1(ds)


# array-level kernels, shared with the learner's hot path -------------------

def or_ips_values(delta, pi, mu0, mu1) -> np.ndarray:
    denom = delta * pi + (1.0 - pi)
    return (delta * pi * mu1 + (1.0 - pi) * mu0) / denom


def ipw_ips_values(y, a, delta, pi) -> np.ndarray:
    denom = delta * pi + (1.0 - pi)
    return y * (delta * a + 1.0 - a) / denom


def eif_components(y, a, delta, pi, mu0, mu1):
    denom = delta * pi + (1.0 - pi)
    residual = (a * delta * (y - mu1) + (1.0 - a) * (y - mu0)) / denom
    plug_in = (delta * pi * mu1 + (1.0 - pi) * mu0) / denom
    correction = delta * (mu1 - mu0) * (a - pi) / denom**2
    return residual, plug_in, correction


def eif_values(y, a, delta, pi, mu0, mu1) -> np.ndarray:
    residual, plug_in, correction = eif_components(y, a, delta, pi, mu0, mu1)
    return residual + plug_in + correction


# dataset-level estimators ---------------------------------------------------

def value_or_ips(ds: Dataset, policy: IncrementalPolicy, nuis: NuisanceFit) -> ValueEstimate:
    """Plug-in outcome-regression estimate; no standard error."""
    delta, pi, mu0, mu1 = _policy_inputs(ds, policy, nuis)
    return ValueEstimate(value=_mean(or_ips_values(delta, pi, mu0, mu1)),
                         estimator="OR_IPS", n_used=ds.n)


def value_ipw_ips(ds: Dataset, policy: IncrementalPolicy, nuis: NuisanceFit) -> ValueEstimate:
    """Plug-in weighting estimate; no standard error."""
    delta = policy.delta(ds)
    pi = nuis.pi(ds)
    a = ds.A.astype(np.float64)
    return ValueEstimate(value=_mean(ipw_ips_values(ds.Y, a, delta, pi)),
                         estimator="IPW_IPS", n_used=ds.n)


def eif_terms(ds: Dataset, policy: IncrementalPolicy, nuis: NuisanceFit) -> EifTerms:
    """Per-unit uncentered influence values under the fitted nuisances."""
    delta, pi, mu0, mu1 = _policy_inputs(ds, policy, nuis)
    a = ds.A.astype(np.float64)
    residual, plug_in, correction = eif_components(ds.Y, a, delta, pi, mu0, mu1)
    return EifTerms(xi=residual + plug_in + correction,
                    regression_residual=residual,
                    plug_in=plug_in,
                    propensity_correction=correction)


def _one_step_from_xi(xi: np.ndarray, estimator: str) -> ValueEstimate:
    n = len(xi)
    value = _mean(xi)
    se = math.sqrt(_mean((xi - value) ** 2) / n)
    return _with_ci(value, se, estimator, n)


def value_one_step(ds: Dataset, policy: IncrementalPolicy, nuis: NuisanceFit) -> ValueEstimate:
    """Bias-corrected estimate: the sample mean of the influence values."""
    return _one_step_from_xi(eif_terms(ds, policy, nuis).xi, "ONE_STEP")


def value_cross_fit(ds: Dataset, policy: IncrementalPolicy, cfn: CrossFitNuisance,
                    *, size_weighted: bool = False) -> ValueEstimate:
    """Cross-fitted estimate: fold-k units scored with the fit that held fold k out.

    Folds enter with equal weight by default (matching the plain average of
    per-fold estimates) even when their sizes differ by one; ``size_weighted``
    switches to weighting folds by size.
    """
    if ds.n != cfn.folds.n:
        raise DataError("dataset does not match the cross-fit fold assignment")
    delta = policy.delta(ds)
    a = ds.A.astype(np.float64)
    pi, mu0, mu1 = cfn.oof_values(ds)
    xi = eif_values(ds.Y, a, delta, np.clip(pi, 0.0, 1.0), mu0, mu1)

    K = cfn.K
    fold_means = np.empty(K)
    for k in range(K):
        fold_means[k] = _mean(xi[cfn.folds.indices(k)])
    if size_weighted:
        value = _mean(xi)
    else:
        value = math.fsum(fold_means) / K
    phi2_means = np.empty(K)
    for k in range(K):
        phi2_means[k] = _mean((xi[cfn.folds.indices(k)] - value) ** 2)
    if size_weighted:
        var = _mean((xi - value) ** 2)
    else:
        var = math.fsum(phi2_means) / K
    se = math.sqrt(var / ds.n)
    return _with_ci(value, se, "CROSS_FIT", ds.n)


def value_baselines(ds: Dataset, policy: LinearRulePolicy,
                    nuis: NuisanceFit) -> dict[str, ValueEstimate]:
    """Standard OR / IPW / AIPW estimates for a deterministic policy.

    IPW and AIPW report ``failed=True`` when a unit whose observed treatment
    matches the policy has matched propensity exactly zero; OR never fails.
    """
    d = eval_linear(policy, ds)
    pi = nuis.pi(ds)
    mu0, mu1 = nuis.mu0(ds), nuis.mu1(ds)
    return baseline_values(ds.Y, ds.A.astype(np.float64), d, pi, mu0, mu1)


def baseline_values(y, a, d, pi, mu0, mu1) -> dict[str, ValueEstimate]:
    n = len(y)
    mu_d = np.where(d == 1.0, mu1, mu0)
    or_est = ValueEstimate(value=_mean(mu_d), estimator="OR_STD", n_used=n)

    matched = a == d
    pr = np.where(d == 1.0, pi, 1.0 - pi)
    if bool(np.any(matched & (pr == 0.0))):
        reason = "zero propensity at matched unit"
        failed_ipw = ValueEstimate(value=float("nan"), estimator="IPW_STD", n_used=n,
                                   failed=True, failure_reason=reason)
        failed_aipw = ValueEstimate(value=float("nan"), estimator="AIPW_STD", n_used=n,
                                    failed=True, failure_reason=reason)
        return {"OR_STD": or_est, "IPW_STD": failed_ipw, "AIPW_STD": failed_aipw}

    weight = np.zeros(n)
    np.divide(matched.astype(np.float64), pr, out=weight, where=matched)
    ipw_est = ValueEstimate(value=_mean(weight * y), estimator="IPW_STD", n_used=n)
    aipw_est = ValueEstimate(value=_mean(mu_d + weight * (y - mu_d)),
                             estimator="AIPW_STD", n_used=n)
    return {"OR_STD": or_est, "IPW_STD": ipw_est, "AIPW_STD": aipw_est}
