"""Optimal control of a randomly forced Poisson problem under
probabilistic, penalised almost-sure, and worst-case state constraints."""

from .chance import ChanceSolveConfig, objective, p_sweep, solve_chance
from .distributions import (
    ChiDistribution,
    CovarianceModel,
    SupportSpec,
    chi_eval,
    sample_sphere,
    sample_support,
)
from .harness import RunConfig, RunResult, constraint_violation, load_config, run
from .moreau_yosida import PathSchedule, path_follow, saa_value_grad
from .pde import (
    LaplacianOperator,
    StateBundle,
    basic_states,
    green_row,
    green_rows,
    mean_state,
    precompute_states,
    solve_poisson,
)
from .problem import Field, Grid, ProblemSpec, builtin_problem, evaluate_source
from .robust import (
    NeedleScan,
    RobustEval,
    RobustSolveConfig,
    needle_scan,
    robust_eval,
    solve_robust,
    worst_case_z,
)
from .srd import (
    RadialResult,
    SrdEstimate,
    StateConstraintError,
    directional_derivative,
    estimate,
    mc_probability_oracle,
    nondiff_fraction,
    radial_bound,
)

__all__ = [
    "ChanceSolveConfig",
    "ChiDistribution",
    "CovarianceModel",
    "Field",
    "Grid",
    "LaplacianOperator",
    "NeedleScan",
    "PathSchedule",
    "ProblemSpec",
    "RadialResult",
    "RobustEval",
    "RobustSolveConfig",
    "RunConfig",
    "RunResult",
    "SrdEstimate",
    "StateBundle",
    "StateConstraintError",
    "SupportSpec",
    "basic_states",
    "builtin_problem",
    "chi_eval",
    "constraint_violation",
    "directional_derivative",
    "estimate",
    "evaluate_source",
    "green_row",
    "green_rows",
    "load_config",
    "mc_probability_oracle",
    "mean_state",
    "needle_scan",
    "nondiff_fraction",
    "objective",
    "p_sweep",
    "path_follow",
    "precompute_states",
    "radial_bound",
    "robust_eval",
    "run",
    "saa_value_grad",
    "sample_sphere",
    "sample_support",
    "solve_chance",
    "solve_poisson",
    "solve_robust",
    "worst_case_z",
]

__version__ = "0.1.0"
