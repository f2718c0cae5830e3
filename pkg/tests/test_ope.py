import json
import math

import numpy as np
import pytest

from ipslearn.data import Dataset, make_folds
from ipslearn.nuisance import CrossFitNuisance, NuisanceFit
from ipslearn.ope import (
    ValueEstimate,
    eif_terms,
    value_baselines,
    value_cross_fit,
    value_ipw_ips,
    value_one_step,
    value_or_ips,
)
from ipslearn.policy import FeatureMap, IncrementalPolicy, LinearRulePolicy

from conftest import constant_nuisance, garbage_nuisance, toy_dataset


def one_unit(a, y):
    return Dataset(X=np.array([[0.0]]), A=np.array([float(a)]), Y=np.array([float(y)]))


def log_delta_policy(value):
    fm = FeatureMap(intercept=True, include_sensitive=False, covariates=())
    return IncrementalPolicy(beta=np.array([math.log(value)]), feature_map=fm)


IDENTITY = log_delta_policy(1.0)


class TestOrIps:
    def test_neutral_delta(self):
        est = value_or_ips(one_unit(1, 0.0), IDENTITY, constant_nuisance(0.5, 0.0, 2.0))
        assert est.value == pytest.approx(1.0, rel=1e-15)
        assert est.std_error is None and not est.failed

    def test_tripled_odds(self):
        est = value_or_ips(one_unit(1, 0.0), log_delta_policy(3.0),
                           constant_nuisance(0.5, 0.0, 2.0))
        assert est.value == pytest.approx(1.5, rel=1e-13)

    def test_boundary_propensity_gives_mu1(self):
        est = value_or_ips(one_unit(0, 9.9), log_delta_policy(7.0),
                           constant_nuisance(1.0, -3.0, 2.5))
        assert est.value == pytest.approx(2.5, rel=1e-15)


class TestIpwIps:
    def test_treated_unit(self):
        est = value_ipw_ips(one_unit(1, 2.0), log_delta_policy(3.0),
                            constant_nuisance(0.5, 0.0, 0.0))
        assert est.value == pytest.approx(3.0, rel=1e-15)

    def test_untreated_unit(self):
        est = value_ipw_ips(one_unit(0, 2.0), log_delta_policy(3.0),
                            constant_nuisance(0.5, 0.0, 0.0))
        assert est.value == pytest.approx(1.0, rel=1e-15)

    def test_neutral_delta_is_mean_outcome(self):
        ds = toy_dataset(n=80, seed=11)
        est = value_ipw_ips(ds, IncrementalPolicy(beta=np.zeros(4)), garbage_nuisance(3))
        assert est.value == pytest.approx(ds.Y.mean(), rel=1e-12)


class TestEif:
    def test_neutral_delta_collapses_to_outcome(self):
        ds = toy_dataset(n=60, seed=2)
        terms = eif_terms(ds, IncrementalPolicy(beta=np.zeros(4)), garbage_nuisance(9))
        assert np.max(np.abs(terms.xi - ds.Y)) < 1e-10 * max(1.0, np.abs(ds.Y).max())

    def test_hand_computed_unit(self):
        terms = eif_terms(one_unit(1, 1.0), log_delta_policy(2.0),
                          constant_nuisance(0.5, 0.2, 0.8))
        assert terms.xi[0] == pytest.approx(1.3 / 1.5 + 0.6 / 2.25, rel=1e-12)

    def test_pure_plug_in_at_boundary(self):
        # treated unit at propensity one with a perfect prediction: only the
        # plug-in term survives
        terms = eif_terms(one_unit(1, 0.8), log_delta_policy(2.0),
                          constant_nuisance(1.0, 0.2, 0.8))
        assert terms.xi[0] == pytest.approx(0.8, rel=1e-14)
        assert terms.regression_residual[0] == 0.0
        assert terms.propensity_correction[0] == 0.0

    def test_components_sum(self):
        ds = toy_dataset(n=40, seed=8)
        pol = IncrementalPolicy(beta=np.array([0.2, -0.1, 0.3, 0.5]))
        terms = eif_terms(ds, pol, garbage_nuisance(4))
        assert np.allclose(
            terms.xi,
            terms.regression_residual + terms.plug_in + terms.propensity_correction,
            rtol=0, atol=0)


class TestOneStep:
    def test_neutral_delta_is_mean_outcome(self):
        ds = toy_dataset(n=90, seed=13)
        est = value_one_step(ds, IncrementalPolicy(beta=np.zeros(4)), garbage_nuisance(1))
        assert est.value == pytest.approx(ds.Y.mean(), rel=1e-12)
        assert est.estimator == "ONE_STEP" and est.std_error is not None

    def test_single_unit_degenerate_ci(self):
        est = value_one_step(one_unit(1, 3.0), log_delta_policy(2.0),
                             constant_nuisance(0.4, 1.0, 2.0))
        assert est.std_error == 0.0
        assert est.ci_low == est.value == est.ci_high

    def test_decomposes_as_plug_in_plus_correction(self):
        ds = toy_dataset(n=50, seed=21)
        pol = IncrementalPolicy(beta=np.array([0.3, 0.2, -0.4, 0.1]))
        nuis = garbage_nuisance(5)
        terms = eif_terms(ds, pol, nuis)
        os_est = value_one_step(ds, pol, nuis)
        or_est = value_or_ips(ds, pol, nuis)
        correction = terms.xi - terms.plug_in
        assert os_est.value == pytest.approx(or_est.value + correction.mean(), rel=1e-10)

    def test_never_fails_at_boundary_propensities(self):
        n = 30
        rng = np.random.default_rng(3)
        ds = toy_dataset(n=n, seed=3)
        # propensities exactly 0 and 1 mixed in
        pi = rng.random(n)
        pi[:10] = 0.0
        pi[10:20] = 1.0
        nuis = NuisanceFit.from_functions(lambda d: pi, lambda d: np.ones(n),
                                          lambda d: np.zeros(n))
        for fn in (value_or_ips, value_ipw_ips, value_one_step):
            est = fn(ds, IncrementalPolicy(beta=np.full(4, 2.0)), nuis)
            assert not est.failed and np.isfinite(est.value)


def shared_fit_crossfit(ds, nuis, K, seed=0):
    folds = make_folds(ds.n, K, seed)
    return CrossFitNuisance(folds=folds, per_fold_fits=tuple([nuis] * K))


class TestCrossFit:
    def test_identical_fits_match_one_step(self):
        ds = toy_dataset(n=100, seed=17)
        nuis = garbage_nuisance(6)
        pol = IncrementalPolicy(beta=np.array([0.1, 0.4, -0.2, 0.3]))
        cfn = shared_fit_crossfit(ds, nuis, K=2)
        cf = value_cross_fit(ds, pol, cfn)
        os_est = value_one_step(ds, pol, nuis)
        assert cf.value == pytest.approx(os_est.value, rel=1e-12)
        assert cf.std_error == pytest.approx(os_est.std_error, rel=1e-12)

    def test_neutral_delta_is_mean_outcome(self):
        ds = toy_dataset(n=100, seed=19)
        cfn = shared_fit_crossfit(ds, garbage_nuisance(7), K=5)
        est = value_cross_fit(ds, IncrementalPolicy(beta=np.zeros(4)), cfn)
        assert est.value == pytest.approx(ds.Y.mean(), rel=1e-12)

    def test_fold_relabeling_invariance(self):
        ds = toy_dataset(n=60, seed=23)
        nuis_a, nuis_b = garbage_nuisance(1), garbage_nuisance(2)
        folds = make_folds(ds.n, 2, seed=5)
        flipped = folds.__class__(n=folds.n, K=2, fold_of=1 - folds.fold_of,
                                  seed=folds.seed)
        pol = IncrementalPolicy(beta=np.array([0.5, -0.3, 0.2, 0.1]))
        a = value_cross_fit(ds, pol, CrossFitNuisance(folds, (nuis_a, nuis_b)))
        b = value_cross_fit(ds, pol, CrossFitNuisance(flipped, (nuis_b, nuis_a)))
        assert a.value == pytest.approx(b.value, rel=1e-12)
        assert a.std_error == pytest.approx(b.std_error, rel=1e-12)


class TestBaselines:
    def test_ipw_hand_value(self):
        ds = one_unit(1, 3.0)
        fm = FeatureMap(intercept=True, include_sensitive=False, covariates=())
        pol = LinearRulePolicy(beta=np.array([1.0]), feature_map=fm)  # d == 1
        out = value_baselines(ds, pol, constant_nuisance(0.5, 0.0, 0.0))
        assert out["IPW_STD"].value == pytest.approx(6.0, rel=1e-15)

    def test_zero_propensity_at_matched_unit_fails(self):
        ds = one_unit(1, 3.0)
        fm = FeatureMap(intercept=True, include_sensitive=False, covariates=())
        pol = LinearRulePolicy(beta=np.array([1.0]), feature_map=fm)
        out = value_baselines(ds, pol, constant_nuisance(0.0, 0.0, 0.0))
        for tag in ("IPW_STD", "AIPW_STD"):
            assert out[tag].failed
            assert out[tag].failure_reason == "zero propensity at matched unit"
            assert math.isnan(out[tag].value)
        assert not out["OR_STD"].failed

    def test_zero_propensity_at_unmatched_unit_is_fine(self):
        ds = one_unit(0, 3.0)  # policy treats, data did not: unmatched
        fm = FeatureMap(intercept=True, include_sensitive=False, covariates=())
        pol = LinearRulePolicy(beta=np.array([1.0]), feature_map=fm)
        out = value_baselines(ds, pol, constant_nuisance(0.0, -1.0, 2.0))
        assert not out["IPW_STD"].failed
        assert out["IPW_STD"].value == 0.0
        assert out["OR_STD"].value == pytest.approx(2.0)

    def test_aipw_equals_or_with_exact_outcome_model(self):
        # no-noise outcomes equal to the model predictions: correction vanishes
        n = 20
        rng = np.random.default_rng(5)
        X = rng.normal(size=(n, 2))
        A = (rng.random(n) < 0.5).astype(float)
        mu0 = X[:, 0]
        mu1 = X[:, 0] + 2.0
        Y = np.where(A == 1, mu1, mu0)
        ds = Dataset(X=X, A=A, Y=Y)
        nuis = NuisanceFit.from_functions(lambda d: np.full(n, 0.3),
                                          lambda d: mu0, lambda d: mu1)
        pol = LinearRulePolicy(beta=np.array([0.0, 1.0, 0.0]))
        out = value_baselines(ds, pol, nuis)
        assert out["AIPW_STD"].value == pytest.approx(out["OR_STD"].value, rel=1e-12)

    def test_std_error_only_for_influence_estimators(self):
        ds = toy_dataset(n=40, seed=31)
        nuis = garbage_nuisance(8)
        pol_ips = IncrementalPolicy(beta=np.zeros(4))
        pol_lin = LinearRulePolicy(beta=np.ones(4))
        assert value_or_ips(ds, pol_ips, nuis).std_error is None
        assert value_ipw_ips(ds, pol_ips, nuis).std_error is None
        assert value_one_step(ds, pol_ips, nuis).std_error is not None
        cfn = shared_fit_crossfit(ds, nuis, K=4)
        assert value_cross_fit(ds, pol_ips, cfn).std_error is not None
        for est in value_baselines(ds, pol_lin, nuis).values():
            assert est.std_error is None


class TestCiScaling:
    def test_width_shrinks_like_root_n(self):
        rng = np.random.default_rng(42)
        widths = {}
        pol = IncrementalPolicy(beta=np.array([0.5, 0.1, -0.2, 0.3]))
        for n in (1000, 4000, 16000):
            ds = toy_dataset(n=n, seed=100 + n)
            est = value_one_step(ds, pol, garbage_nuisance(2))
            widths[n] = est.ci_high - est.ci_low
        for big, small in ((1000, 4000), (4000, 16000)):
            ratio = widths[big] / widths[small]
            assert abs(ratio - 2.0) < 0.4  # within 20% of the exact root-n law


class TestValueEstimateSerialization:
    def test_json_and_csv_row(self):
        est = ValueEstimate(value=1.5, estimator="ONE_STEP", n_used=10,
                            std_error=0.2, ci_low=1.1, ci_high=1.9)
        obj = json.loads(json.dumps(est.to_json()))
        assert obj["estimator"] == "ONE_STEP" and obj["value"] == 1.5
        row = est.to_csv_row()
        assert row[0] == "ONE_STEP" and row[6] == "false"

    def test_failed_row(self):
        est = ValueEstimate(value=float("nan"), estimator="IPW_STD", n_used=3,
                            failed=True, failure_reason="zero propensity at matched unit")
        row = est.to_csv_row()
        assert row[1] == "NA" and row[6] == "true"
        assert est.to_json()["value"] is None
