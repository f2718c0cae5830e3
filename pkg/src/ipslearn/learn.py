"""Policy search: derivative-free constrained optimization over policy classes.

Two engines, matched to the two policy classes:

* ``cobyla_solve`` — a linear-approximation trust-region method for the smooth
  incremental-policy objectives. It keeps an axis-aligned simplex of q+1
  points at the incumbent, interpolates linear models of the objective and
  each constraint, and steps to the minimizer of the linearized exact-penalty
  merit (objective + penalty * max violation) inside an infinity-norm trust
  radius, solved as a small LP. Rejected steps shrink the radius from
  rho_start down to rho_end.

* ``genetic_search`` — a real-coded genetic algorithm for the piecewise
  constant linear-rule objectives, where model gradients are useless;
  optionally polished with Nelder-Mead when the objective is smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from ._rng import normal_icdf, substream
from .constraints import ConstraintSpec, constraint_residual
from .data import DataError, Dataset
from .nuisance import CrossFitNuisance, NuisanceFit
from .ope import (
    ValueEstimate,
    baseline_values,
    eif_values,
    ipw_ips_values,
    or_ips_values,
    value_baselines,
    value_cross_fit,
    value_one_step,
    value_or_ips,
    value_ipw_ips,
)
from .policy import FeatureMap, IncrementalPolicy, LinearRulePolicy

__all__ = [
    "CobylaResult",
    "cobyla_solve",
    "GaResult",
    "genetic_search",
    "LearnProblem",
    "LearnResult",
    "learn_policy",
]

IPS_ESTIMATORS = ("OR_IPS", "IPW_IPS", "ONE_STEP", "CROSS_FIT")
STD_ESTIMATORS = ("OR_STD", "IPW_STD", "AIPW_STD")


# ---------------------------------------------------------------------------
# dense simplex LP: min c.z  s.t.  A z <= b, z >= 0   (b of any sign)

def _solve_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    m, n = A.shape
    A = A.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    art_rows = np.flatnonzero(neg)
    n_art = art_rows.size
    total = n + m + n_art

    T = np.zeros((m, total))
    T[:, :n] = A
    slack_sign = np.where(neg, -1.0, 1.0)
    T[np.arange(m), n + np.arange(m)] = slack_sign
    basis = n + np.arange(m)
    art_cols = []
    for j, i in enumerate(art_rows):
        col = n + m + j
        T[i, col] = 1.0
        basis[i] = col
        art_cols.append(col)
    rhs = b

    def pivot(row: int, col: int) -> None:
        piv = T[row, col]
        T[row] /= piv
        rhs[row] /= piv
        for r in range(m):
            if r != row:
                f = T[r, col]
                if f != 0.0:
                    T[r] -= f * T[row]
                    rhs[r] -= f * rhs[row]
        basis[row] = col

    def run(obj: np.ndarray) -> bool:
        # Bland's rule: always pick the lowest eligible index, so no cycling.
        for _ in range(200 * (m + total)):
            reduced = obj - obj[basis] @ T
            enter = -1
            for j in range(total):
                if reduced[j] < -1e-10:
                    enter = j
                    break
            if enter < 0:
                return True
            leave = -1
            best_ratio = np.inf
            for i in range(m):
                t = T[i, enter]
                if t > 1e-11:
                    ratio = rhs[i] / t
                    if ratio < best_ratio - 1e-12 or (
                        ratio < best_ratio + 1e-12 and (leave < 0 or basis[i] < basis[leave])
                    ):
                        best_ratio = ratio
                        leave = i
            if leave < 0:
                return False  # unbounded
            pivot(leave, enter)
        return False

    if n_art:
        obj1 = np.zeros(total)
        obj1[art_cols] = 1.0
        if not run(obj1) or float(obj1[basis] @ rhs) > 1e-8:
            return None
        for i in range(m):
            if basis[i] in art_cols:
                for j in range(n + m):
                    if abs(T[i, j]) > 1e-9:
                        pivot(i, j)
                        break
        for col in art_cols:
            T[:, col] = 0.0

    obj2 = np.zeros(total)
    obj2[:n] = c
    if not run(obj2):
        return None
    z = np.zeros(total)
    z[basis] = rhs
    return z[:n]


def _lp_step(cf: np.ndarray, G: np.ndarray, gvals: np.ndarray, slo: np.ndarray,
             shi: np.ndarray, penalty: float) -> np.ndarray:
    """Minimize cf.s + penalty*t s.t. gvals + G s <= t, t >= 0, slo <= s <= shi."""
    q = cf.shape[0]
    m = G.shape[0]
    width = shi - slo
    # variables z = (s - slo, t); rows: constraints, then upper bounds on s
    A = np.zeros((m + q, q + 1))
    b = np.zeros(m + q)
    A[:m, :q] = G
    A[:m, q] = -1.0
    b[:m] = -(gvals + G @ slo)
    A[m:, :q] = np.eye(q)
    b[m:] = width
    c = np.concatenate([cf, [penalty]])
    z = _solve_lp(c, A, b)
    if z is None:
        return np.zeros(q)  # fall back to no step; caller will shrink rho
    return z[:q] + slo


@dataclass
class CobylaResult:
    x: np.ndarray
    objective: float
    max_violation: float
    n_evals: int
    converged: bool
    trace: Optional[list] = None


def cobyla_solve(
    objective: Callable[[np.ndarray], float],
    constraints: Sequence[Callable[[np.ndarray], float]],
    x0: np.ndarray,
    box: Optional[tuple[np.ndarray, np.ndarray]] = None,
    *,
    rho_start: float = 0.5,
    rho_end: float = 1e-6,
    max_evals: int = 5000,
    initial_penalty: float = 10.0,
    feasibility_tol: float = 1e-6,
    keep_trace: bool = False,
) -> CobylaResult:
    """Minimize ``objective`` subject to each constraint being <= 0.

    Returns the best feasible point seen (falling back to the best merit point
    when nothing satisfied the constraints within ``feasibility_tol``).
    ``converged`` reports whether the trust radius reached ``rho_end`` within
    the evaluation budget.
    """
    x0 = np.asarray(x0, dtype=np.float64).copy()
    q = x0.shape[0]
    m = len(constraints)
    if box is not None:
        lo = np.asarray(box[0], dtype=np.float64)
        hi = np.asarray(box[1], dtype=np.float64)
        x0 = np.clip(x0, lo, hi)
    else:
        lo = np.full(q, -np.inf)
        hi = np.full(q, np.inf)

    n_evals = 0

    def evaluate(x: np.ndarray) -> tuple[float, np.ndarray]:
        nonlocal n_evals
        n_evals += 1
        f = float(objective(x))
        g = np.array([float(con(x)) for con in constraints]) if m else np.empty(0)
        return f, g

    def violation(g: np.ndarray) -> float:
        return float(max(0.0, g.max())) if m else 0.0

    penalty = initial_penalty

    best_feasible: Optional[tuple[float, np.ndarray, float]] = None
    best_merit: Optional[tuple[float, np.ndarray, float, float]] = None

    def note(x: np.ndarray, f: float, v: float) -> None:
        nonlocal best_feasible, best_merit
        if v <= feasibility_tol and (best_feasible is None or f < best_feasible[0]):
            best_feasible = (f, x.copy(), v)
        mer = f + penalty * v
        if best_merit is None or mer < best_merit[0]:
            best_merit = (mer, x.copy(), f, v)

    # simplex of q+1 interpolation points; index 0 is the incumbent
    pts = np.zeros((q + 1, q))
    fs = np.zeros(q + 1)
    gs = np.zeros((q + 1, m)) if m else np.zeros((q + 1, 0))

    def respan(rho: float) -> bool:
        """Fresh axis-aligned stencil of radius rho around the incumbent."""
        center = pts[0]
        for i in range(q):
            if n_evals >= max_evals:
                return False
            h = rho if center[i] + rho <= hi[i] else -rho
            xp = center.copy()
            xp[i] += h
            fp, gp = evaluate(xp)
            note(xp, fp, violation(gp))
            pts[i + 1] = xp
            fs[i + 1] = fp
            if m:
                gs[i + 1] = gp
        return True

    f0, g0 = evaluate(x0)
    pts[0], fs[0] = x0, f0
    if m:
        gs[0] = g0
    note(x0, f0, violation(g0))

    trace: Optional[list] = [] if keep_trace else None
    rho = rho_start
    converged = False
    iteration = 0
    ok = respan(rho)

    while ok:
        if rho < rho_end:
            converged = True
            break
        if n_evals + 1 > max_evals:
            break

        xc = pts[0]
        fc = fs[0]
        gc = gs[0] if m else np.empty(0)
        vc = violation(gc)

        # linear models by interpolation over the simplex
        D = pts[1:] - pts[0]
        spread = float(np.max(np.abs(D)))
        if spread > 10.0 * rho or spread == 0.0 or np.linalg.cond(D) > 1e8:
            if not respan(rho):
                break
            continue
        try:
            grad_f = np.linalg.solve(D, fs[1:] - fs[0])
            grad_g = np.linalg.solve(D, gs[1:] - gs[0]).T if m else np.empty((0, q))
        except np.linalg.LinAlgError:
            if not respan(rho):
                break
            continue
        if not (np.all(np.isfinite(grad_f)) and np.all(np.isfinite(grad_g))):
            if not respan(rho):
                break
            continue

        slo = np.maximum(-rho, lo - xc)
        shi = np.minimum(rho, hi - xc)
        if m == 0:
            step = np.where(grad_f > 0, slo, np.where(grad_f < 0, shi, 0.0))
        else:
            step = _lp_step(grad_f, grad_g, gc, slo, shi, penalty)

        predicted = grad_f @ step + penalty * (
            max(0.0, float((gc + grad_g @ step).max())) - vc if m else 0.0
        )
        if predicted > -1e-14 * (1.0 + abs(fc)):
            rho *= 0.5
            continue

        xt = xc + step
        ft, gt = evaluate(xt)
        vt = violation(gt)
        note(xt, ft, vt)
        merit_c = fc + penalty * vc
        merit_t = ft + penalty * vt
        actual = merit_c - merit_t

        if merit_t < merit_c - 1e-14 * (1.0 + abs(merit_c)):
            # candidate becomes the incumbent, displacing the farthest vertex
            far = int(np.argmax(np.sum((pts - xt) ** 2, axis=1)))
            pts[far], fs[far] = xt, ft
            if m:
                gs[far] = gt
            if far != 0:
                pts[[0, far]] = pts[[far, 0]]
                fs[[0, far]] = fs[[far, 0]]
                if m:
                    gs[[0, far]] = gs[[far, 0]]
            # trust-region ratio control: poor model agreement, an interior
            # step, or negligible gain all mean this radius is done
            ratio = actual / max(-predicted, 1e-300)
            step_len = float(np.max(np.abs(step)))
            if (ratio < 0.25 or step_len <= 0.3 * rho
                    or actual <= 1e-10 * (1.0 + abs(merit_c))):
                rho *= 0.5
        else:
            if vc > feasibility_tol and vt > feasibility_tol and penalty < 1e10:
                penalty = min(penalty * 10.0, 1e10)
            else:
                rho *= 0.5
            # keep the candidate's information in place of the farthest free vertex
            far = 1 + int(np.argmax(np.sum((pts[1:] - xt) ** 2, axis=1)))
            pts[far], fs[far] = xt, ft
            if m:
                gs[far] = gt

        iteration += 1
        if trace is not None:
            bf = best_feasible[0] if best_feasible is not None else float("nan")
            trace.append((iteration, bf, violation(gs[0] if m else np.empty(0))))

    if best_feasible is not None:
        f_out, x_out, v_out = best_feasible
    else:
        _, x_out, f_out, v_out = best_merit
    return CobylaResult(x=x_out, objective=f_out, max_violation=v_out,
                        n_evals=n_evals, converged=converged, trace=trace)


@dataclass
class GaResult:
    x: np.ndarray
    objective: float
    n_evals: int


def genetic_search(
    objective: Callable[[np.ndarray], float],
    dim: int,
    box: tuple[np.ndarray, np.ndarray],
    *,
    seed: int = 0,
    pop_size: int = 50,
    generations: int = 200,
    tournament: int = 3,
    blend_alpha: float = 0.5,
    mutation_rate: float = 0.2,
    mutation_sigma_frac: float = 0.1,
    elitism: int = 2,
    polish: bool = True,
) -> GaResult:
    """Minimize ``objective`` over the box with a real-coded genetic algorithm.

    Infinite objective values act as a death penalty. With ``polish`` the best
    point is refined by Nelder-Mead, which only makes sense for smooth
    objectives; leave it off for indicator-policy objectives.
    """
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    sigma = mutation_sigma_frac * (hi - lo)
    rng = substream(seed, 0x6E71C)

    pop = lo + (hi - lo) * rng.random((pop_size, dim))
    fit = np.array([float(objective(x)) for x in pop])
    n_evals = pop_size

    def tournament_pick() -> np.ndarray:
        idx = rng.integers(0, pop_size, size=tournament)
        return pop[idx[np.argmin(fit[idx])]]

    for _ in range(generations):
        order = np.argsort(fit, kind="stable")
        children = [pop[order[i]].copy() for i in range(elitism)]
        child_fit = [float(fit[order[i]]) for i in range(elitism)]
        while len(children) < pop_size:
            p1, p2 = tournament_pick(), tournament_pick()
            low = np.minimum(p1, p2)
            high = np.maximum(p1, p2)
            span = high - low
            child = (low - blend_alpha * span) + (1.0 + 2.0 * blend_alpha) * span * rng.random(dim)
            mask = rng.random(dim) < mutation_rate
            if mask.any():
                child = child + mask * sigma * normal_icdf(rng, dim)
            child = np.clip(child, lo, hi)
            children.append(child)
            child_fit.append(float(objective(child)))
            n_evals += 1
        pop = np.array(children)
        fit = np.array(child_fit)

    best = int(np.argmin(fit))
    x_best, f_best = pop[best].copy(), float(fit[best])
    if polish and np.isfinite(f_best):
        res = _scipy_minimize(
            objective, x_best, method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"xatol": 1e-9, "fatol": 1e-12, "maxfev": 400 * dim},
        )
        n_evals += int(res.nfev)
        if np.isfinite(res.fun) and res.fun < f_best:
            x_best, f_best = np.clip(res.x, lo, hi), float(res.fun)
    return GaResult(x=x_best, objective=f_best, n_evals=n_evals)


# ---------------------------------------------------------------------------
# policy learning


@dataclass(frozen=True)
class LearnProblem:
    """What to maximize, over which policy class, subject to what."""

    estimator: str
    policy_class: str = "ips"
    constraint: ConstraintSpec = field(default_factory=ConstraintSpec)
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    delta_cap: float = 30.0
    box_low: float = -10.0
    box_high: float = 10.0
    seed: int = 0
    n_restarts: int = 5
    max_evals: int = 5000
    feasibility_tol: float = 1e-6
    ga_population: int = 50
    ga_generations: int = 200
    collect_trace: bool = False

    def __post_init__(self):
        if self.policy_class not in ("ips", "linear"):
            raise ValueError(f"unknown policy class {self.policy_class!r}")
        expected = IPS_ESTIMATORS if self.policy_class == "ips" else STD_ESTIMATORS
        if self.estimator not in expected:
            raise ValueError(
                f"estimator {self.estimator} is incompatible with the "
                f"{self.policy_class} policy class (expected one of {expected})"
            )
        if not self.box_low <= self.box_high:
            raise ValueError("empty box")

    def to_json(self) -> dict:
        return {
            "estimator": self.estimator,
            "policy_class": self.policy_class,
            "constraint": self.constraint.to_json(),
            "feature_map": self.feature_map.to_json(),
            "delta_cap": self.delta_cap,
            "box_low": self.box_low,
            "box_high": self.box_high,
            "seed": self.seed,
            "n_restarts": self.n_restarts,
            "max_evals": self.max_evals,
            "feasibility_tol": self.feasibility_tol,
            "ga_population": self.ga_population,
            "ga_generations": self.ga_generations,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LearnProblem":
        kwargs = dict(obj)
        if "constraint" in kwargs:
            kwargs["constraint"] = ConstraintSpec.from_json(kwargs["constraint"])
        if "feature_map" in kwargs:
            kwargs["feature_map"] = FeatureMap.from_json(kwargs["feature_map"])
        kwargs = {k: v for k, v in kwargs.items() if k in cls.__dataclass_fields__}
        return cls(**kwargs)


@dataclass
class LearnResult:
    beta_hat: np.ndarray
    value_at_opt: ValueEstimate
    constraint_at_opt: Optional[float]
    n_evals: int
    converged: bool
    n_failed_evals: int = 0
    failure_reason: Optional[str] = None
    trace: Optional[list] = None

    def policy(self, problem: LearnProblem):
        if problem.policy_class == "ips":
            return IncrementalPolicy(beta=self.beta_hat, feature_map=problem.feature_map,
                                     delta_cap=problem.delta_cap)
        return LinearRulePolicy(beta=self.beta_hat, feature_map=problem.feature_map)

    def to_json(self, problem: Optional[LearnProblem] = None) -> dict:
        obj = {
            "beta_hat": [float(b) for b in self.beta_hat],
            "value": self.value_at_opt.to_json(),
            "constraint_at_opt": self.constraint_at_opt,
            "n_evals": self.n_evals,
            "converged": self.converged,
            "n_failed_evals": self.n_failed_evals,
            "failure_reason": self.failure_reason,
        }
        if problem is not None:
            obj["problem"] = problem.to_json()
            obj["policy"] = self.policy(problem).to_json()
        if self.trace is not None:
            obj["trace"] = [[int(i), float(v), float(c)] for i, v, c in self.trace]
        return obj


class _IpsObjective:
    """Cached arrays for fast repeated evaluation of one IPS learning problem."""

    def __init__(self, ds: Dataset, nuis, problem: LearnProblem):
        self.ds = ds
        self.problem = problem
        self.F = problem.feature_map.rows(ds)
        self.y = ds.Y
        self.a = ds.A.astype(np.float64)
        self.cap = problem.delta_cap
        self.estimator = problem.estimator
        if problem.estimator == "CROSS_FIT":
            if not isinstance(nuis, CrossFitNuisance):
                raise DataError("CROSS_FIT estimator needs a CrossFitNuisance")
            self.pi, self.mu0, self.mu1 = nuis.oof_values(ds)
            self.fold_of = nuis.folds.fold_of
            self.K = nuis.K
            self.fold_counts = np.bincount(self.fold_of, minlength=self.K)
        else:
            if not isinstance(nuis, NuisanceFit):
                raise DataError(f"{problem.estimator} estimator needs a full-sample NuisanceFit")
            self.pi = nuis.pi(ds)
            self.mu0 = nuis.mu0(ds)
            self.mu1 = nuis.mu1(ds)

    def d_vals(self, beta: np.ndarray) -> np.ndarray:
        delta = np.exp(np.clip(self.F @ beta, -self.cap, self.cap))
        dp = delta * self.pi
        return dp / (dp + (1.0 - self.pi))

    def value(self, beta: np.ndarray) -> float:
        delta = np.exp(np.clip(self.F @ beta, -self.cap, self.cap))
        if self.estimator == "OR_IPS":
            return float(np.mean(or_ips_values(delta, self.pi, self.mu0, self.mu1)))
        if self.estimator == "IPW_IPS":
            return float(np.mean(ipw_ips_values(self.y, self.a, delta, self.pi)))
        xi = eif_values(self.y, self.a, delta, self.pi, self.mu0, self.mu1)
        if self.estimator == "ONE_STEP":
            return float(np.mean(xi))
        sums = np.bincount(self.fold_of, weights=xi, minlength=self.K)
        return float(np.mean(sums / self.fold_counts))


def _final_estimate(ds: Dataset, nuis, problem: LearnProblem, beta: np.ndarray) -> ValueEstimate:
    if problem.policy_class == "ips":
        pol = IncrementalPolicy(beta=beta, feature_map=problem.feature_map,
                                delta_cap=problem.delta_cap)
        if problem.estimator == "OR_IPS":
            return value_or_ips(ds, pol, nuis)
        if problem.estimator == "IPW_IPS":
            return value_ipw_ips(ds, pol, nuis)
        if problem.estimator == "ONE_STEP":
            return value_one_step(ds, pol, nuis)
        return value_cross_fit(ds, pol, nuis)
    pol = LinearRulePolicy(beta=beta, feature_map=problem.feature_map)
    return value_baselines(ds, pol, nuis)[problem.estimator]


def _learn_ips(ds: Dataset, nuis, problem: LearnProblem) -> LearnResult:
    ctx = _IpsObjective(ds, nuis, problem)
    q = ctx.F.shape[1]
    lo = np.full(q, problem.box_low)
    hi = np.full(q, problem.box_high)

    def neg_value(beta: np.ndarray) -> float:
        return -ctx.value(beta)

    cons: list[Callable[[np.ndarray], float]] = []
    if problem.constraint.is_active:
        spec = problem.constraint

        def residual(beta: np.ndarray) -> float:
            return constraint_residual(spec, ds, ctx.d_vals(beta))

        cons.append(residual)

    starts = [np.zeros(q)]
    for i in range(problem.n_restarts):
        rng = substream(problem.seed, 0xC0B, i)
        starts.append(lo + (hi - lo) * rng.random(q))

    total_evals = 0
    runs: list[tuple[CobylaResult, int]] = []
    merged_trace: Optional[list] = [] if problem.collect_trace else None
    best_so_far = -np.inf
    for idx, x0 in enumerate(starts):
        res = cobyla_solve(neg_value, cons, x0, box=(lo, hi),
                           max_evals=problem.max_evals,
                           feasibility_tol=problem.feasibility_tol,
                           keep_trace=problem.collect_trace)
        total_evals += res.n_evals
        runs.append((res, idx))
        if merged_trace is not None and res.trace:
            # best-so-far value across restarts; NaN until a feasible point exists
            for _, bf, viol in res.trace:
                if not math.isnan(bf):
                    best_so_far = max(best_so_far, -bf)
                merged_trace.append((len(merged_trace) + 1,
                                     best_so_far if np.isfinite(best_so_far) else float("nan"),
                                     viol))

    feasible = [r for r, _ in runs if r.max_violation <= problem.feasibility_tol]
    if feasible:
        winner = min(feasible, key=lambda r: r.objective)
        converged = winner.converged
        reason = None
    else:
        winner = min((r for r, _ in runs), key=lambda r: (r.max_violation, r.objective))
        converged = False
        reason = "no feasible point found"

    beta_hat = winner.x
    resid = (constraint_residual(problem.constraint, ds, ctx.d_vals(beta_hat))
             if problem.constraint.is_active else None)
    return LearnResult(
        beta_hat=beta_hat,
        value_at_opt=_final_estimate(ds, nuis, problem, beta_hat),
        constraint_at_opt=resid,
        n_evals=total_evals,
        converged=converged,
        failure_reason=reason,
        trace=merged_trace,
    )


def _learn_linear(ds: Dataset, nuis, problem: LearnProblem) -> LearnResult:
    if not isinstance(nuis, NuisanceFit):
        raise DataError("linear-class learning needs a full-sample NuisanceFit")
    F = problem.feature_map.rows(ds)
    q = F.shape[1]
    y = ds.Y
    a = ds.A.astype(np.float64)
    pi = nuis.pi(ds)
    mu0 = nuis.mu0(ds)
    mu1 = nuis.mu1(ds)
    spec = problem.constraint
    tag = problem.estimator
    failed_evals = 0

    def neg_value(beta: np.ndarray) -> float:
        nonlocal failed_evals
        norm = float(np.linalg.norm(beta))
        if norm == 0.0 or not np.isfinite(norm):
            return np.inf
        d = (F @ (beta / norm) > 0.0).astype(np.float64)
        if spec.is_active:
            try:
                if constraint_residual(spec, ds, d) > 0.0:
                    return np.inf  # death penalty
            except ValueError:
                return np.inf
        est = baseline_values(y, a, d, pi, mu0, mu1)[tag]
        if est.failed:
            failed_evals += 1
            return np.inf
        return -est.value

    ga = genetic_search(neg_value, q, (np.full(q, problem.box_low), np.full(q, problem.box_high)),
                        seed=problem.seed, pop_size=problem.ga_population,
                        generations=problem.ga_generations, polish=False)
    if not np.isfinite(ga.objective):
        beta_hat = np.full(q, np.nan)
        estimate = ValueEstimate(value=float("nan"), estimator=tag, n_used=ds.n,
                                 failed=True, failure_reason="no feasible candidate")
        return LearnResult(beta_hat=beta_hat, value_at_opt=estimate, constraint_at_opt=None,
                           n_evals=ga.n_evals, converged=False,
                           n_failed_evals=failed_evals,
                           failure_reason="no feasible candidate")

    beta_hat = ga.x / float(np.linalg.norm(ga.x))
    d = (F @ beta_hat > 0.0).astype(np.float64)
    resid = constraint_residual(spec, ds, d) if spec.is_active else None
    return LearnResult(
        beta_hat=beta_hat,
        value_at_opt=_final_estimate(ds, nuis, problem, beta_hat),
        constraint_at_opt=resid,
        n_evals=ga.n_evals,
        converged=True,
        n_failed_evals=failed_evals,
    )


def learn_policy(ds: Dataset, nuis, problem: LearnProblem) -> LearnResult:
    """Maximize the chosen value estimator over the chosen policy class."""
    if problem.constraint.kind in ("dp", "eo") and ds.S is None:
        raise DataError(f"{problem.constraint.kind} constraint needs a sensitive attribute")
    if problem.policy_class == "ips":
        return _learn_ips(ds, nuis, problem)
    return _learn_linear(ds, nuis, problem)
