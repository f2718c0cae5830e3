"""Nuisance models: propensity pi(x) and arm-wise outcome regressions mu_a(x).

Three learner families are provided. ``logistic`` is an IRLS fit with
step-halving that degenerates gracefully under perfect separation (it stops at
the iteration cap with a non-convergence flag; the near-0/1 predictions remain
usable, which is exactly the regime the estimators must tolerate). ``ridge``
solves the penalized normal equations. ``boosted_trees`` wraps deterministic
gradient-boosted regression trees; propensity scores from trees are clamped to
[0, 1] and may equal the endpoints exactly — no trimming anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.ensemble import GradientBoostingRegressor

from .data import DataError, Dataset, FoldAssignment, make_folds

__all__ = [
    "FitError",
    "LearnerSpec",
    "NuisanceFit",
    "CrossFitNuisance",
    "fit_propensity",
    "fit_outcome_arm",
    "fit_full",
    "fit_crossfit",
]

LEARNER_KINDS = ("logistic", "ridge", "boosted_trees")


class FitError(RuntimeError):
    """Raised when a nuisance model cannot be fit as requested."""


@dataclass(frozen=True)
class LearnerSpec:
    """Learner choice plus its hyperparameters.

    ``terms`` optionally replaces the raw feature columns with transformed
    ones, e.g. ("x1", "x2", "x3", "s", "x3^2", "exp(x2)"); an intercept is
    always prepended for the linear learners.
    """

    kind: str = "boosted_trees"
    ridge_lambda: float = 0.0
    n_trees: int = 200
    max_depth: int = 2
    learning_rate: float = 0.1
    min_leaf: int = 10
    max_iter: int = 100
    tol: float = 1e-10
    terms: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.ridge_lambda < 0:
            raise ValueError("ridge penalty must be nonnegative")
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("tree hyperparameters must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning rate must be in (0,1]")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("invalid logistic iteration settings")
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(self.terms))

    def to_json(self) -> dict:
        obj: dict = {"kind": self.kind}
        if self.kind == "ridge":
            obj["ridge_lambda"] = self.ridge_lambda
        if self.kind == "boosted_trees":
            obj.update(n_trees=self.n_trees, max_depth=self.max_depth,
                       learning_rate=self.learning_rate, min_leaf=self.min_leaf)
        if self.kind == "logistic":
            obj.update(max_iter=self.max_iter, tol=self.tol)
        if self.terms is not None:
            obj["terms"] = list(self.terms)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "LearnerSpec":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in obj.items() if k in known}
        if "terms" in kwargs and kwargs["terms"] is not None:
            kwargs["terms"] = tuple(kwargs["terms"])
        return cls(**kwargs)


def _eval_term(term: str, ds: Dataset) -> np.ndarray:
    term = term.strip()
    if term.startswith("exp(") and term.endswith(")"):
        return np.exp(ds.column(term[4:-1]))
    if term.startswith("log(") and term.endswith(")"):
        return np.log(ds.column(term[4:-1]))
    if "^" in term:
        name, power = term.split("^", 1)
        return ds.column(name.strip()) ** int(power)
    if "*" in term:
        parts = [ds.column(p.strip()) for p in term.split("*")]
        out = parts[0].copy()
        for p in parts[1:]:
            out = out * p
        return out
    return ds.column(term)


def default_features(ds: Dataset) -> tuple[str, ...]:
    """All covariates, with the sensitive attribute first when present."""
    base = ("s",) if ds.S is not None else ()
    return base + tuple(ds.column_names)


def design_matrix(ds: Dataset, features: Optional[Sequence[str]], spec: LearnerSpec,
                  intercept: bool) -> np.ndarray:
    if spec.terms is not None:
        cols = [_eval_term(t, ds) for t in spec.terms]
    else:
        names = tuple(features) if features is not None else default_features(ds)
        if not names:
            cols = []
        else:
            cols = [ds.column(name) for name in names]
    if intercept:
        cols = [np.ones(ds.n)] + cols
    if not cols:
        raise DataError("no features selected")
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# fitted predictors


@dataclass(frozen=True)
class LinearPredictor:
    """Linear model over a term/selector design; optional logit link and clamp."""

    coef: np.ndarray
    features: Optional[tuple[str, ...]]
    spec: LearnerSpec
    link: str = "identity"  # or "logit"
    clamp: bool = False
    diagnostics: dict = field(default_factory=dict)

    def predict(self, ds: Dataset) -> np.ndarray:
        Z = design_matrix(ds, self.features, self.spec, intercept=True)
        eta = Z @ self.coef
        if self.link == "logit":
            return expit(eta)
        if self.clamp:
            return np.clip(eta, 0.0, 1.0)
        return eta


@dataclass(frozen=True)
class TreePredictor:
    """Boosted-tree model; raw scores optionally clamped to [0, 1]."""

    model: GradientBoostingRegressor
    features: Optional[tuple[str, ...]]
    spec: LearnerSpec
    clamp: bool = False
    diagnostics: dict = field(default_factory=dict)

    def predict(self, ds: Dataset) -> np.ndarray:
        Z = design_matrix(ds, self.features, self.spec, intercept=False)
        out = self.model.predict(Z)
        if self.clamp:
            out = np.clip(out, 0.0, 1.0)
        return out


@dataclass(frozen=True)
class FunctionPredictor:
    """Wraps a closed-form nuisance function of the dataset."""

    fn: Callable[[Dataset], np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    def predict(self, ds: Dataset) -> np.ndarray:
        return np.asarray(self.fn(ds), dtype=np.float64)


def _fit_logistic(Z: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> tuple[np.ndarray, dict]:
    n, q = Z.shape
    beta = np.zeros(q)
    eta = Z @ beta

    def loglik(e):
        return float(np.sum(y * e - np.logaddexp(0.0, e)))

    ll = loglik(eta)
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iter + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        grad = Z.T @ (y - p)
        H = Z.T @ (Z * w[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        alpha = 1.0
        improved = False
        for _ in range(30):
            cand = beta + alpha * step
            cand_eta = Z @ cand
            cand_ll = loglik(cand_eta)
            if cand_ll >= ll:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        beta, eta = cand, cand_eta
        if abs(cand_ll - ll) <= spec.tol * (abs(ll) + 1e-12):
            ll = cand_ll
            converged = True
            break
        ll = cand_ll
    score_norm = float(np.linalg.norm(Z.T @ (y - expit(eta)) / n))
    diag = {
        "model": "logistic",
        "n": n,
        "loglik": ll,
        "iterations": iterations,
        "converged": converged,
        "mean_score_norm": score_norm,
    }
    return beta, diag


def _fit_ridge(Z: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    q = Z.shape[1]
    G = Z.T @ Z
    if lam > 0:
        penalty = np.eye(q) * lam
        penalty[0, 0] = 0.0  # intercept unpenalized
        G = G + penalty
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise FitError("singular ridge system (add a positive penalty or drop columns)") from None
    coef = np.linalg.solve(L.T, np.linalg.solve(L, Z.T @ y))
    return coef


def _fit_trees(Z: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> GradientBoostingRegressor:
    model = GradientBoostingRegressor(
        loss="squared_error",
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        learning_rate=spec.learning_rate,
        min_samples_leaf=spec.min_leaf,
        subsample=1.0,
        random_state=0,
    )
    model.fit(Z, y)
    return model


def fit_propensity(ds: Dataset, spec: LearnerSpec,
                   features: Optional[Sequence[str]] = None):
    """Fit pi(x) = Pr(A=1 | x). Predictions always lie in [0, 1], endpoints allowed."""
    if ds.n < 2:
        raise FitError("need at least 2 rows to fit a propensity model")
    features = tuple(features) if features is not None else None
    y = ds.A.astype(np.float64)
    if spec.kind == "logistic":
        Z = design_matrix(ds, features, spec, intercept=True)
        coef, diag = _fit_logistic(Z, y, spec)
        return LinearPredictor(coef=coef, features=features, spec=spec, link="logit",
                               diagnostics=diag)
    Z = design_matrix(ds, features, spec, intercept=spec.kind == "ridge")
    if spec.kind == "ridge":
        coef = _fit_ridge(Z, y, spec.ridge_lambda)
        diag = {"model": "ridge", "n": ds.n, "mse": float(np.mean((Z @ coef - y) ** 2))}
        return LinearPredictor(coef=coef, features=features, spec=spec, clamp=True,
                               diagnostics=diag)
    model = _fit_trees(Z, y, spec)
    diag = {"model": "boosted_trees", "n": ds.n,
            "mse": float(np.mean((model.predict(Z) - y) ** 2))}
    return TreePredictor(model=model, features=features, spec=spec, clamp=True,
                         diagnostics=diag)


def fit_outcome_arm(ds: Dataset, arm: int, spec: LearnerSpec,
                    features: Optional[Sequence[str]] = None):
    """Fit mu_arm(x) = E[Y | x, A=arm] on the rows with A == arm."""
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    if spec.kind == "logistic":
        raise FitError("logistic learner is for propensities, not outcomes")
    features = tuple(features) if features is not None else None
    mask = ds.A == arm
    sub = ds.subset(np.flatnonzero(mask)) if mask.any() else None
    if sub is not None:
        Z = design_matrix(sub, features, spec, intercept=spec.kind == "ridge")
        needed = Z.shape[1] + 2
    else:
        needed = 2
    n_arm = int(mask.sum())
    if sub is None or n_arm < needed:
        raise FitError(f"insufficient arm sample: {n_arm} rows with A={arm}, need {needed}")
    if spec.kind == "ridge":
        coef = _fit_ridge(Z, sub.Y, spec.ridge_lambda)
        diag = {"model": "ridge", "n": n_arm, "arm": arm,
                "mse": float(np.mean((Z @ coef - sub.Y) ** 2))}
        return LinearPredictor(coef=coef, features=features, spec=spec, diagnostics=diag)
    model = _fit_trees(Z, sub.Y, spec)
    diag = {"model": "boosted_trees", "n": n_arm, "arm": arm,
            "mse": float(np.mean((model.predict(Z) - sub.Y) ** 2))}
    return TreePredictor(model=model, features=features, spec=spec, diagnostics=diag)


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted propensity and arm-wise outcome models."""

    propensity: object
    outcome0: object
    outcome1: object

    def pi(self, ds: Dataset) -> np.ndarray:
        out = self.propensity.predict(ds)
        return np.clip(out, 0.0, 1.0)

    def mu0(self, ds: Dataset) -> np.ndarray:
        return self.outcome0.predict(ds)

    def mu1(self, ds: Dataset) -> np.ndarray:
        return self.outcome1.predict(ds)

    def contrast(self, ds: Dataset) -> np.ndarray:
        return self.mu1(ds) - self.mu0(ds)

    @property
    def fit_diagnostics(self) -> dict:
        return {
            "propensity": getattr(self.propensity, "diagnostics", {}),
            "outcome0": getattr(self.outcome0, "diagnostics", {}),
            "outcome1": getattr(self.outcome1, "diagnostics", {}),
        }

    @classmethod
    def from_functions(cls, pi_fn, mu0_fn, mu1_fn) -> "NuisanceFit":
        return cls(
            propensity=FunctionPredictor(pi_fn),
            outcome0=FunctionPredictor(mu0_fn),
            outcome1=FunctionPredictor(mu1_fn),
        )


def fit_full(ds: Dataset, spec_pi: LearnerSpec, spec_mu: LearnerSpec,
             features_pi: Optional[Sequence[str]] = None,
             features_mu: Optional[Sequence[str]] = None) -> NuisanceFit:
    """Fit all three nuisance models on the full sample."""
    return NuisanceFit(
        propensity=fit_propensity(ds, spec_pi, features_pi),
        outcome0=fit_outcome_arm(ds, 0, spec_mu, features_mu),
        outcome1=fit_outcome_arm(ds, 1, spec_mu, features_mu),
    )


@dataclass(frozen=True)
class CrossFitNuisance:
    """K nuisance fits; fit k was trained with fold k's rows held out."""

    folds: FoldAssignment
    per_fold_fits: tuple[NuisanceFit, ...]

    @property
    def K(self) -> int:
        return self.folds.K

    def oof_values(self, ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Out-of-fold (pi, mu0, mu1) for every unit of the training sample."""
        if ds.n != self.folds.n:
            raise DataError("dataset does not match the fold assignment")
        pi = np.empty(ds.n)
        mu0 = np.empty(ds.n)
        mu1 = np.empty(ds.n)
        for k in range(self.K):
            idx = self.folds.indices(k)
            part = ds.subset(idx)
            fit = self.per_fold_fits[k]
            pi[idx] = fit.pi(part)
            mu0[idx] = fit.mu0(part)
            mu1[idx] = fit.mu1(part)
        return pi, mu0, mu1


def fit_crossfit(ds: Dataset, K: int, seed: int, spec_pi: LearnerSpec,
                 spec_mu: LearnerSpec,
                 features_pi: Optional[Sequence[str]] = None,
                 features_mu: Optional[Sequence[str]] = None) -> CrossFitNuisance:
    """Fit K leave-one-fold-out nuisance sets over a seeded fold assignment."""
    folds = make_folds(ds.n, K, seed)
    fits = []
    for k in range(K):
        train = ds.subset(folds.complement(k))
        try:
            fits.append(fit_full(train, spec_pi, spec_mu, features_pi, features_mu))
        except FitError as exc:
            raise FitError(f"fold {k}: {exc}") from exc
    return CrossFitNuisance(folds=folds, per_fold_fits=tuple(fits))
