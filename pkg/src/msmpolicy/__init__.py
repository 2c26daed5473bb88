"""msmpolicy: confounding-robust policy learning under bounded odds-ratio
deviations between nominal and true treatment assignment.

The package learns treatment policies from observational data when the
usual unconfoundedness assumption may fail by a bounded amount: it
computes sharp partial-identification bounds on conditional means and
treatment effects, builds cross-fitted doubly robust scores for the
worst-case welfare and worst-case improvement criteria, and maximizes
them over interpretable policy classes (quadrant rules, shallow decision
trees, logistic rules). Every closed form is verified against an
independent brute-force oracle in the test and self-check suites.
"""

from .bounds import (
    FiniteLaw,
    bound_integrand,
    cate_bounds,
    closed_form_bound,
    first_best_improvement_arm,
    first_best_welfare_arm,
    lp_sharp_bound,
    three_case_rule,
)
from .core import (
    Dataset,
    FoldAssignment,
    Observation,
    clip_simplex,
    from_arrays,
    load_dataset_csv,
    make_folds,
    mix_seed,
    validate_dataset,
    write_dataset_csv,
)
from .estimators import RobustPolicyLearner
from .nuisance import (
    CrossfitModels,
    NuisanceModel,
    NuisanceSpec,
    OracleBundle,
    fit_crossfit,
    fit_propensity,
    fit_quantile,
    fit_rho,
)
from .optimize import (
    PolicyFit,
    PolicySpec,
    learn_mmi,
    learn_mmw,
    logistic_ascent,
    optimize_policy,
    quadrant_search,
    tree_search,
)
from .policies import (
    ConstantPolicy,
    LogisticPolicy,
    Policy,
    QuadrantPolicy,
    TreePolicy,
    policy_from_dict,
    policy_from_json,
)
from .scores import (
    ScoreTable,
    build_score_table,
    estimate_improvement,
    estimate_improvement_vs,
    estimate_welfare,
    improvement_scores,
    plug_in_bounds,
    score_lower,
    score_upper,
    welfare_scores,
)
from .selfcheck import run_selfcheck
from .simlab import (
    DgpConfig,
    SweepConfig,
    draw,
    estimate_regret,
    evaluate_policy,
    make_headstart_like,
    make_jtpa_like,
    oracle_bounds,
    oracle_bundle,
    run_sweep,
    summarize_sweep,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
