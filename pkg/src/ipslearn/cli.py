"""Command-line front end: simulate, evaluate, learn, replicate.

Statistical failure (an estimator returning NA, an infeasible learning
problem) is a recorded result, not a process error: those runs still exit 0.
Exit code 2 marks usage or configuration problems, 1 an unexpected internal
error. All emitted files start with a metadata record carrying the package
version, the resolved semantic configuration, and the seed; runtime knobs
(thread count, output paths) are excluded so outputs stay byte-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .constraints import ConstraintSpec
from .data import DataError, Dataset, load_csv, save_csv
from .learn import LearnProblem, learn_policy
from .nuisance import FitError, LearnerSpec, fit_crossfit, fit_full
from .ope import (
    CSV_HEADER,
    ValueEstimate,
    value_baselines,
    value_cross_fit,
    value_one_step,
    value_or_ips,
    value_ipw_ips,
)
from .policy import IncrementalPolicy, LinearRulePolicy, policy_from_json
from .sim import DgpSpec, generate, replicate_config, run_experiment

USAGE_ERROR, INTERNAL_ERROR = 2, 1


class ConfigError(Exception):
    """Bad flags or config files; reported on stderr with exit code 2."""


def _meta_line(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return f"ipslearn={__version__} seed={config.get('seed')} config={payload}"


def _default_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("IPSLEARN_SEED")
    return int(env) if env else 0


def _learner_spec(text: str | None, default_kind: str = "boosted_trees") -> LearnerSpec:
    if not text:
        return LearnerSpec(kind=default_kind)
    text = text.strip()
    try:
        if text.startswith("{"):
            return LearnerSpec.from_json(json.loads(text))
        if text.startswith("@"):
            with open(text[1:], "r", encoding="utf-8") as fh:
                return LearnerSpec.from_json(json.load(fh))
        return LearnerSpec(kind=text)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad learner spec {text!r}: {exc}") from exc


def _constraint_from_flags(args) -> ConstraintSpec:
    kind = args.constraint or "none"
    try:
        return ConstraintSpec(kind=kind,
                              threshold=args.threshold if args.threshold is not None else 0.0,
                              quantile_tau=args.quantile_tau)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_dataset(args) -> Dataset:
    try:
        return load_csv(args.data, outcome=args.outcome, treatment=args.treatment,
                        sensitive=args.sensitive,
                        covariates=args.covariate_cols.split(",") if args.covariate_cols else None)
    except (DataError, OSError) as exc:
        raise ConfigError(f"cannot load {args.data}: {exc}") from exc


def cmd_simulate(args) -> int:
    seed = _default_seed(args.seed)
    config = {"subcommand": "simulate", "scenario": args.scenario, "n": args.n, "seed": seed}
    covariates = None
    if args.scenario == "semi_synthetic_formula":
        if not args.covariates:
            raise ConfigError("semi_synthetic_formula needs --covariates CSV")
        covariates = load_csv(args.covariates, outcome=args.outcome, treatment=args.treatment,
                              sensitive=args.sensitive or "race")
    pd = generate(DgpSpec(args.scenario, args.n, seed), covariates=covariates)
    save_csv(pd.ds, args.out,
             extra={"y0": pd.Y0, "y1": pd.Y1, "true_pi": pd.true_pi},
             meta=_meta_line(config))
    return 0


def _evaluate_one(tag: str, ds: Dataset, policies: dict, nuis, cfn) -> ValueEstimate:
    if tag in ("OR_IPS", "IPW_IPS", "ONE_STEP", "CROSS_FIT"):
        pol = policies.get("ips")
        if pol is None:
            return ValueEstimate(value=float("nan"), estimator=tag, n_used=ds.n,
                                 failed=True, failure_reason="no ips policy supplied")
        if tag == "OR_IPS":
            return value_or_ips(ds, pol, nuis)
        if tag == "IPW_IPS":
            return value_ipw_ips(ds, pol, nuis)
        if tag == "ONE_STEP":
            return value_one_step(ds, pol, nuis)
        return value_cross_fit(ds, pol, cfn)
    pol = policies.get("linear")
    if pol is None:
        return ValueEstimate(value=float("nan"), estimator=tag, n_used=ds.n,
                             failed=True, failure_reason="no linear policy supplied")
    return value_baselines(ds, pol, nuis)[tag]


def cmd_evaluate(args) -> int:
    seed = _default_seed(args.seed)
    ds = _load_dataset(args)
    policies = {}
    for path in args.policy:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                pol = policy_from_json(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot parse policy {path}: {exc}") from exc
        policies["ips" if isinstance(pol, IncrementalPolicy) else "linear"] = pol
    spec_pi = _learner_spec(args.learner_pi)
    spec_mu = _learner_spec(args.learner_mu)
    tags = (["OR_IPS", "IPW_IPS", "ONE_STEP", "CROSS_FIT", "OR_STD", "IPW_STD", "AIPW_STD"]
            if args.estimator == "all" else [args.estimator])
    try:
        nuis = fit_full(ds, spec_pi, spec_mu)
        cfn = (fit_crossfit(ds, args.folds, seed, spec_pi, spec_mu)
               if "CROSS_FIT" in tags else None)
    except FitError as exc:
        raise ConfigError(f"nuisance fit failed: {exc}") from exc
    estimates = [_evaluate_one(tag, ds, policies, nuis, cfn) for tag in tags]

    config = {"subcommand": "evaluate", "estimators": tags, "seed": seed,
              "learner_pi": spec_pi.to_json(), "learner_mu": spec_mu.to_json(),
              "folds": args.folds}
    _emit(args, config, csv_rows=[CSV_HEADER] + [e.to_csv_row() for e in estimates],
          json_obj={"estimates": [e.to_json() for e in estimates]})
    return 0


def cmd_learn(args) -> int:
    ds = _load_dataset(args)
    try:
        with open(args.problem, "r", encoding="utf-8") as fh:
            problem_obj = json.load(fh)
        if args.seed is not None or "seed" not in problem_obj:
            problem_obj["seed"] = _default_seed(args.seed)
        problem = LearnProblem.from_json(problem_obj)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot parse problem {args.problem}: {exc}") from exc
    spec_pi = _learner_spec(args.learner_pi)
    spec_mu = _learner_spec(args.learner_mu)
    try:
        if problem.estimator == "CROSS_FIT":
            nuis = fit_crossfit(ds, args.folds, problem.seed, spec_pi, spec_mu)
        else:
            nuis = fit_full(ds, spec_pi, spec_mu)
    except FitError as exc:
        raise ConfigError(f"nuisance fit failed: {exc}") from exc
    result = learn_policy(ds, nuis, problem)
    config = {"subcommand": "learn", "seed": problem.seed,
              "problem": problem.to_json(),
              "learner_pi": spec_pi.to_json(), "learner_mu": spec_mu.to_json()}
    payload = {"meta": _meta_line(config), "result": result.to_json(problem)}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_replicate(args) -> int:
    seed = _default_seed(args.seed)
    overrides = {"seed": seed}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.n is not None:
        overrides["n_train"] = args.n
    if args.n_test is not None:
        overrides["n_test"] = args.n_test
    if args.folds is not None:
        overrides["folds"] = args.folds
    if args.use_crossfit:
        overrides["use_crossfit"] = True
    try:
        config = replicate_config(args.figure, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = run_experiment(config, threads=args.threads)
    meta = {"subcommand": "replicate", "figure": args.figure, "seed": seed,
            **config.to_json()}
    _emit(args, meta, csv_rows=result.table_lines(),
          json_obj=result.to_json())
    if args.timings:
        with open(args.timings, "w", encoding="utf-8") as fh:
            json.dump({"meta": _meta_line(meta), **result.timing_report()}, fh, indent=2)
    return 0


def _emit(args, config: dict, csv_rows: list, json_obj: dict) -> None:
    if args.format == "json":
        payload = {"meta": _meta_line(config), **json_obj}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if getattr(args, "out", None):
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return
    out = getattr(args, "out", None)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {_meta_line(config)}\n")
            csv.writer(fh).writerows(csv_rows)
    else:
        sys.stdout.write(f"# {_meta_line(config)}\n")
        csv.writer(sys.stdout).writerows(csv_rows)


def _add_data_flags(sub) -> None:
    sub.add_argument("--data", required=True, help="input CSV")
    sub.add_argument("--outcome", default="y")
    sub.add_argument("--treatment", default="a")
    sub.add_argument("--sensitive", default=None)
    sub.add_argument("--covariate-cols", default=None,
                     help="comma-separated covariate columns (default: all remaining)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipslearn",
                                     description="Positivity-free off-policy evaluation "
                                                 "and constrained policy learning")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    sim = subs.add_parser("simulate", help="draw a synthetic dataset with potential outcomes")
    sim.add_argument("--scenario", required=True,
                     choices=["fair_dp", "sufficient_overlap", "fair_dp_parametric",
                              "semi_synthetic_formula"])
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.add_argument("--covariates", default=None,
                     help="covariate CSV for semi_synthetic_formula")
    sim.add_argument("--outcome", default="y")
    sim.add_argument("--treatment", default="a")
    sim.add_argument("--sensitive", default=None)
    sim.set_defaults(func=cmd_simulate)

    ev = subs.add_parser("evaluate", help="estimate the value of a fixed policy")
    _add_data_flags(ev)
    ev.add_argument("--policy", action="append", required=True,
                    help="policy JSON; may repeat to supply both an ips and a linear policy")
    ev.add_argument("--estimator", default="all",
                    choices=["all", "OR_IPS", "IPW_IPS", "ONE_STEP", "CROSS_FIT",
                             "OR_STD", "IPW_STD", "AIPW_STD"])
    ev.add_argument("--learner-pi", default=None)
    ev.add_argument("--learner-mu", default=None)
    ev.add_argument("--folds", type=int, default=5)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", default=None)
    ev.add_argument("--format", default="csv", choices=["csv", "json"])
    ev.set_defaults(func=cmd_evaluate)

    ln = subs.add_parser("learn", help="search for the best policy under a problem spec")
    _add_data_flags(ln)
    ln.add_argument("--problem", required=True, help="LearnProblem JSON file")
    ln.add_argument("--learner-pi", default=None)
    ln.add_argument("--learner-mu", default=None)
    ln.add_argument("--folds", type=int, default=5)
    ln.add_argument("--seed", type=int, default=None)
    ln.add_argument("--out", default=None)
    ln.set_defaults(func=cmd_learn)

    rep = subs.add_parser("replicate", help="rerun a published synthetic experiment")
    rep.add_argument("--figure", required=True, choices=["fig1a", "figS1a", "figS1b"])
    rep.add_argument("--reps", type=int, default=None)
    rep.add_argument("--n", type=int, default=None)
    rep.add_argument("--n-test", type=int, default=None)
    rep.add_argument("--folds", type=int, default=None)
    rep.add_argument("--use-crossfit", action="store_true",
                     help="use the K-fold estimator for the One-step method")
    rep.add_argument("--seed", type=int, default=None)
    rep.add_argument("--threads", type=int, default=1)
    rep.add_argument("--out", default=None)
    rep.add_argument("--timings", default=None,
                     help="optional JSON file for wall-clock timings (not byte-reproducible)")
    rep.add_argument("--format", default="csv", choices=["csv", "json"])
    rep.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception:
        traceback.print_exc()
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
