import numpy as np
import pytest

from ipslearn.constraints import (
    ConstraintSpec,
    budget_metric,
    constraint_residual,
    dp_metric,
    eo_metric,
    quantile_constraint,
    weighted_quantile,
)
from ipslearn.data import Dataset


def pinball_loss(Y, c, tau, q):
    u = Y - q
    return float(np.sum(c * u * (tau - (u < 0))))


def grid_argmin(Y, c, tau, lo, hi, step=1e-3):
    """Independent brute-force oracle: first grid point attaining the minimum."""
    grid = np.arange(lo, hi + step, step)
    losses = np.array([pinball_loss(Y, c, tau, q) for q in grid])
    return float(grid[int(np.argmin(losses))]), float(losses.min())


class TestDpMetric:
    def test_constant_policy_is_zero(self):
        assert dp_metric(np.full(10, 0.4), np.array([0] * 5 + [1] * 5)) == 0.0

    def test_hand_value(self):
        val = dp_metric(np.array([1.0, 1.0, 0.0, 0.0]), np.array([0, 0, 1, 1]))
        assert val == pytest.approx(np.sqrt(0.5), rel=1e-12)

    def test_single_group_is_zero(self):
        assert dp_metric(np.array([0.2, 0.9, 0.4]), np.zeros(3, dtype=int)) == 0.0

    def test_permutation_invariant(self, rng):
        d = rng.random(30)
        S = rng.integers(0, 3, 30)
        perm = rng.permutation(30)
        assert dp_metric(d, S) == pytest.approx(dp_metric(d[perm], S[perm]), rel=1e-12)

    def test_relabel_invariant(self, rng):
        d = rng.random(30)
        S = rng.integers(0, 3, 30)
        assert dp_metric(d, S) == pytest.approx(dp_metric(d, 2 - S), rel=1e-12)


class TestEoMetric:
    def test_constant_policy_is_zero(self):
        S = np.array([0, 0, 1, 1])
        A = np.array([1, 0, 1, 0])
        assert eo_metric(np.full(4, 0.7), S, A) == 0.0

    def test_hand_value_singleton_cells(self):
        val = eo_metric(np.array([1.0, 0.0]), np.array([0, 1]), np.array([1, 1]))
        assert val == pytest.approx(np.sqrt(0.5), rel=1e-12)

    def test_single_group(self):
        assert eo_metric(np.array([0.3, 0.9]), np.array([0, 0]), np.array([1, 0])) == 0.0

    def test_empty_treated_cell_errors(self):
        with pytest.raises(ValueError, match="group 1"):
            eo_metric(np.array([1.0, 0.0]), np.array([0, 1]), np.array([1, 0]))


class TestBudgetMetric:
    def test_examples(self):
        assert budget_metric(np.array([1.0, 0, 1, 0])) == 0.5
        assert budget_metric(np.zeros(4)) == 0.0
        assert budget_metric(np.array([0.2, 0.4])) == pytest.approx(0.3, rel=1e-15)

    def test_linear_in_mixture(self, rng):
        d1, d2 = rng.random(20), rng.random(20)
        for alpha in (0.0, 0.25, 0.7, 1.0):
            mix = alpha * d1 + (1 - alpha) * d2
            assert budget_metric(mix) == pytest.approx(
                alpha * budget_metric(d1) + (1 - alpha) * budget_metric(d2), rel=1e-12)


class TestWeightedQuantile:
    def test_unweighted_median(self):
        assert weighted_quantile(np.array([1.0, 2.0, 3.0]), np.ones(3), 0.5) == 2.0

    def test_smallest_minimizer_tie(self):
        # any q in [1, 3] minimizes; the weighted order statistic picks 1
        assert weighted_quantile(np.array([5.0, 1.0, 3.0]), np.array([0.0, 1.0, 1.0]), 0.5) == 1.0

    def test_small_tau_gives_min_weighted(self):
        Y = np.array([4.0, -2.0, 7.0])
        c = np.array([0.0, 1.0, 1.0])
        assert weighted_quantile(Y, c, 1e-9) == -2.0

    def test_degenerate_weights(self):
        with pytest.raises(ValueError):
            weighted_quantile(np.array([1.0]), np.array([0.0]), 0.5)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            weighted_quantile(np.array([1.0]), np.array([1.0]), 1.0)

    def test_matches_grid_oracle(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 40))
            Y = np.round(rng.normal(0, 2, n), 3)
            c = rng.random(n) * (rng.random(n) < 0.8)
            if c.sum() == 0:
                continue
            tau = float(rng.choice([0.1, 0.25, 0.5, 0.9]))
            q = weighted_quantile(Y, c, tau)
            _, best = grid_argmin(Y, c, tau, Y.min(), Y.max())
            assert pinball_loss(Y, c, tau, q) <= best + 1e-9


class TestQuantileConstraint:
    def _ds(self, Y, A):
        n = len(Y)
        return Dataset(X=np.zeros((n, 1)), A=np.array(A, dtype=float), Y=np.array(Y))

    def test_policy_agreeing_with_data(self):
        ds = self._ds([3.0, 1.0, 2.0, 5.0], [1, 0, 1, 0])
        d = ds.A.astype(float)
        assert quantile_constraint(ds, d, 0.5) == weighted_quantile(ds.Y, np.ones(4), 0.5)

    def test_policy_contradicting_data(self):
        ds = self._ds([3.0, 1.0], [1, 0])
        with pytest.raises(ValueError, match="degenerate"):
            quantile_constraint(ds, 1.0 - ds.A.astype(float), 0.5)

    def test_stochastic_matches_grid(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 50))
            ds = self._ds(np.round(rng.normal(0, 3, n), 3),
                          (rng.random(n) < 0.5).astype(float))
            d = rng.random(n)
            tau = float(rng.choice([0.1, 0.25, 0.5, 0.9]))
            c = ds.A * d + (1 - ds.A) * (1 - d)
            if c.sum() <= 0:
                continue
            q = quantile_constraint(ds, d, tau)
            loc, best = grid_argmin(ds.Y, c, tau, ds.Y.min(), ds.Y.max())
            assert abs(q - loc) <= 1e-3 + 1e-9


class TestConstraintSpec:
    def test_residual_conventions(self, rng):
        n = 40
        ds = Dataset(X=rng.normal(size=(n, 2)), A=(rng.random(n) < 0.5).astype(float),
                     Y=rng.normal(size=n), S=np.array([0, 1] * (n // 2)))
        d = rng.random(n)
        assert constraint_residual(ConstraintSpec("dp", 0.01), ds, d) == pytest.approx(
            dp_metric(d, ds.S) - 0.01, rel=1e-12)
        assert constraint_residual(ConstraintSpec("budget", 0.3), ds, d) == pytest.approx(
            budget_metric(d) - 0.3, rel=1e-12)
        q_resid = constraint_residual(ConstraintSpec("quantile", -1.0, quantile_tau=0.25), ds, d)
        assert q_resid == pytest.approx(-1.0 - quantile_constraint(ds, d, 0.25), rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            ConstraintSpec("quantile", 0.0)
        with pytest.raises(ValueError):
            ConstraintSpec("dp", 0.1, quantile_tau=0.5)
        with pytest.raises(ValueError):
            ConstraintSpec("nope", 0.0)

    def test_json_round_trip(self):
        spec = ConstraintSpec("quantile", 2.5, quantile_tau=0.3)
        assert ConstraintSpec.from_json(spec.to_json()) == spec
