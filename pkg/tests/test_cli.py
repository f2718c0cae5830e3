import csv
import json

import numpy as np
import pytest

from ipslearn.cli import main
from ipslearn.data import Dataset, save_csv


def run_cli(*args):
    return main(list(args))


def read_table(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(lines))


@pytest.fixture
def sim_csv(tmp_path):
    out = tmp_path / "d.csv"
    assert run_cli("simulate", "--scenario", "fair_dp", "--n", "300",
                   "--seed", "2", "--out", str(out)) == 0
    return out


def ips_policy_file(tmp_path, beta):
    path = tmp_path / "pol.json"
    path.write_text(json.dumps({
        "kind": "ips", "beta": list(beta),
        "feature_map": {"intercept": True, "include_sensitive": True, "covariates": None},
        "delta_cap": 30.0,
    }))
    return path


def linear_policy_file(tmp_path, beta, include_sensitive=True):
    path = tmp_path / "lin.json"
    path.write_text(json.dumps({
        "kind": "linear", "beta": list(beta),
        "feature_map": {"intercept": True, "include_sensitive": include_sensitive,
                        "covariates": None},
    }))
    return path


class TestSimulate:
    def test_shape(self, tmp_path):
        out = tmp_path / "d.csv"
        assert run_cli("simulate", "--scenario", "fair_dp", "--n", "100",
                       "--seed", "1", "--out", str(out)) == 0
        rows = read_table(out)
        assert rows[0] == ["y", "a", "s", "x1", "x2", "x3", "y0", "y1", "true_pi"]
        assert len(rows) == 101

    def test_missing_scenario_is_usage_error(self, tmp_path):
        assert run_cli("simulate", "--n", "5", "--out", str(tmp_path / "x.csv")) == 2

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run_cli("simulate", "--scenario", "sufficient_overlap", "--n", "50",
                           "--seed", "9", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_metadata_line_present(self, tmp_path):
        out = tmp_path / "d.csv"
        run_cli("simulate", "--scenario", "fair_dp", "--n", "10", "--seed", "3",
                "--out", str(out))
        first = out.read_text().splitlines()[0]
        assert first.startswith("# ipslearn=") and "seed=3" in first


class TestEvaluate:
    def test_identity_policy_recovers_mean_outcome(self, tmp_path, sim_csv):
        pol = ips_policy_file(tmp_path, [0, 0, 0, 0, 0])
        out = tmp_path / "est.csv"
        assert run_cli("evaluate", "--data", str(sim_csv), "--sensitive", "s",
                       "--covariate-cols", "x1,x2,x3",
                       "--policy", str(pol), "--estimator", "ONE_STEP",
                       "--learner-pi", "logistic",
                       "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                       "--seed", "5", "--out", str(out)) == 0
        rows = read_table(out)
        values = {r[0]: r for r in rows[1:]}
        y = np.array([float(r[0]) for r in read_table(sim_csv)[1:]])
        assert float(values["ONE_STEP"][1]) == pytest.approx(y.mean(), rel=1e-10)

    def test_all_estimators_give_seven_rows(self, tmp_path, sim_csv):
        pol = ips_policy_file(tmp_path, [0.1, 0.0, 0.2, -0.1, 0.0])
        lin = linear_policy_file(tmp_path, [0.1, 0.3, -0.5, 0.2, 0.4])
        out = tmp_path / "est.csv"
        assert run_cli("evaluate", "--data", str(sim_csv), "--sensitive", "s",
                       "--covariate-cols", "x1,x2,x3",
                       "--policy", str(pol), "--policy", str(lin),
                       "--estimator", "all",
                       "--learner-pi", "logistic",
                       "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                       "--seed", "5", "--out", str(out)) == 0
        rows = read_table(out)
        assert len(rows) == 8  # header + 7 estimators

    def test_zero_propensity_failure_is_recorded_not_fatal(self, tmp_path):
        # linear-probability propensity clamps to exactly 0 at the treated
        # outlier; a treat-everyone policy matches it, so IPW must report NA
        x = np.arange(17.0)
        A = np.zeros(17)
        A[0] = 1.0
        A[9:] = 1.0
        ds = Dataset(X=x.reshape(-1, 1), A=A, Y=np.linspace(1, 3, 17),
                     column_names=("x1",))
        data = tmp_path / "zero.csv"
        save_csv(ds, data)
        lin = linear_policy_file(tmp_path, [1.0, 0.0], include_sensitive=False)
        out = tmp_path / "est.csv"
        assert run_cli("evaluate", "--data", str(data),
                       "--policy", str(lin), "--estimator", "IPW_STD",
                       "--learner-pi", '{"kind":"ridge","ridge_lambda":0.0}',
                       "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                       "--out", str(out)) == 0
        row = read_table(out)[1]
        assert row[0] == "IPW_STD" and row[1] == "NA" and row[6] == "true"

    def test_unparsable_policy_is_usage_error(self, tmp_path, sim_csv):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("evaluate", "--data", str(sim_csv), "--sensitive", "s",
                       "--policy", str(bad)) == 2

    def test_missing_data_file(self, tmp_path):
        pol = ips_policy_file(tmp_path, [0, 0, 0, 0, 0])
        assert run_cli("evaluate", "--data", str(tmp_path / "none.csv"),
                       "--policy", str(pol)) == 2


class TestLearn:
    def problem_file(self, tmp_path, **fields):
        prob = {"estimator": "OR_IPS", "policy_class": "ips", "seed": 3,
                "max_evals": 600, "n_restarts": 1}
        prob.update(fields)
        path = tmp_path / "prob.json"
        path.write_text(json.dumps(prob))
        return path

    def test_zero_budget_is_binding(self, tmp_path, sim_csv):
        prob = self.problem_file(
            tmp_path, constraint={"kind": "budget", "threshold": 0.0},
            box_low=-40.0, box_high=40.0, max_evals=2000, n_restarts=2)
        out = tmp_path / "res.json"
        assert run_cli("learn", "--data", str(sim_csv), "--sensitive", "s",
                       "--covariate-cols", "x1,x2,x3",
                       "--problem", str(prob),
                       "--learner-pi", "logistic",
                       "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                       "--out", str(out)) == 0
        result = json.loads(out.read_text())["result"]
        assert result["constraint_at_opt"] <= 1e-6

    def test_deterministic_result_files(self, tmp_path, sim_csv):
        prob = self.problem_file(tmp_path)
        outs = []
        for name in ("r1.json", "r2.json"):
            out = tmp_path / name
            assert run_cli("learn", "--data", str(sim_csv), "--sensitive", "s",
                           "--covariate-cols", "x1,x2,x3",
                           "--problem", str(prob),
                           "--learner-pi", "logistic",
                           "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                           "--out", str(out)) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_infeasible_problem_still_exits_zero(self, tmp_path, sim_csv):
        prob = self.problem_file(
            tmp_path, constraint={"kind": "quantile", "threshold": 1e9,
                                  "quantile_tau": 0.5},
            max_evals=300)
        out = tmp_path / "res.json"
        assert run_cli("learn", "--data", str(sim_csv), "--sensitive", "s",
                       "--covariate-cols", "x1,x2,x3",
                       "--problem", str(prob),
                       "--learner-pi", "logistic",
                       "--learner-mu", '{"kind":"ridge","ridge_lambda":0.001}',
                       "--out", str(out)) == 0
        result = json.loads(out.read_text())["result"]
        assert result["converged"] is False


class TestReplicate:
    def test_shape_and_exit(self, tmp_path):
        out = tmp_path / "rep.csv"
        assert run_cli("replicate", "--figure", "fig1a", "--reps", "1",
                       "--n", "150", "--n-test", "500", "--seed", "3",
                       "--out", str(out)) == 0
        rows = read_table(out)
        rep_rows = [r for r in rows if r and r[0] == "rep"]
        assert len(rep_rows) == 6  # six methods, one repetition
        methods = [r[2] for r in rep_rows]
        assert methods == ["IPW", "OR", "AIPW", "IPW-IPS", "OR-IPS", "One-step"]
        assert rows[-1][0] == "true_optimum"

    def test_unknown_figure_is_usage_error(self):
        assert run_cli("replicate", "--figure", "nope") == 2
