"""Positivity-free off-policy evaluation and constrained policy learning."""

__version__ = "0.1.0"

from .constraints import (
    ConstraintSpec,
    budget_metric,
    dp_metric,
    eo_metric,
    quantile_constraint,
    weighted_quantile,
)
from .data import Dataset, FoldAssignment, load_csv, make_folds, save_csv, split_train_test
from .learn import LearnProblem, LearnResult, cobyla_solve, genetic_search, learn_policy
from .nuisance import (
    CrossFitNuisance,
    LearnerSpec,
    NuisanceFit,
    fit_crossfit,
    fit_full,
    fit_outcome_arm,
    fit_propensity,
)
from .ope import (
    EifTerms,
    ValueEstimate,
    eif_terms,
    value_baselines,
    value_cross_fit,
    value_ipw_ips,
    value_one_step,
    value_or_ips,
)
from .policy import (
    FeatureMap,
    IncrementalPolicy,
    LinearRulePolicy,
    eval_incremental,
    eval_linear,
    implied_odds_ratio,
    ips_prob,
)
from .sim import (
    DgpSpec,
    ExperimentConfig,
    PotentialDataset,
    generate,
    replicate_config,
    run_experiment,
    true_nuisance_fit,
    true_optimal_value,
    true_value,
)
