"""Instrumental-variable quantile regression via convex subproblems.

The estimator decentralizes the non-convex IVQR moment problem into one
ordinary quantile regression plus one weighted quantile regression per
endogenous regressor, and finds the estimate as a fixed point of the
resulting best-response maps: by contraction iteration, univariate
root-finding, nested recursion, or residual minimization.  A grid-search
baseline, an empirical bootstrap, and Monte Carlo simulation designs with
analytically known quantile coefficients round out the toolkit.
"""

from .errors import (
    CovarianceNotPDError,
    GridTooCoarseWarning,
    InsufficientDrawsError,
    IvqrError,
    NoInterceptError,
    NonFiniteError,
    NonPositiveWeightError,
    RankDeficientError,
    TooManyFailuresError,
)
from .qr import (
    OptimalityCheck,
    QRProblem,
    QRSolution,
    check_optimality,
    solve_weighted_qr,
    subgradient_bound,
)
from .model import (
    ReparamRecord,
    Sample,
    Theta,
    moment_bounds,
    prepare,
    project_instruments,
    reparametrize,
    sample_moments,
    tsls,
    tsls_with_se,
    unreparametrize,
)
from .fixpoint import (
    ContractionDiagnostic,
    EstimateResult,
    SolverOptions,
    algorithms,
    best_response_1,
    best_response_j,
    default_algorithm,
    diagnose_contraction,
    estimate,
    fit,
    fixed_point_curve,
    k_map,
    m_map,
    solve_brent,
    solve_contraction,
    solve_nested,
    solve_residual_min,
)
from .iqr import IqrGrid, solve_iqr
from .bootstrap import BootstrapResult, bootstrap_estimate, percentile_ci
from .simulate import (
    AppLikeConfig,
    LocationScaleConfig,
    McConfig,
    SimulationReport,
    gen_application_like,
    gen_location_scale,
    run_monte_carlo,
)

__version__ = "0.1.0"

__all__ = [
    "AppLikeConfig",
    "BootstrapResult",
    "ContractionDiagnostic",
    "CovarianceNotPDError",
    "EstimateResult",
    "GridTooCoarseWarning",
    "InsufficientDrawsError",
    "IqrGrid",
    "IvqrError",
    "LocationScaleConfig",
    "McConfig",
    "NoInterceptError",
    "NonFiniteError",
    "NonPositiveWeightError",
    "OptimalityCheck",
    "QRProblem",
    "QRSolution",
    "RankDeficientError",
    "ReparamRecord",
    "Sample",
    "SimulationReport",
    "SolverOptions",
    "Theta",
    "TooManyFailuresError",
    "algorithms",
    "best_response_1",
    "best_response_j",
    "bootstrap_estimate",
    "check_optimality",
    "default_algorithm",
    "diagnose_contraction",
    "estimate",
    "fit",
    "fixed_point_curve",
    "gen_application_like",
    "gen_location_scale",
    "k_map",
    "m_map",
    "moment_bounds",
    "percentile_ci",
    "prepare",
    "project_instruments",
    "reparametrize",
    "run_monte_carlo",
    "sample_moments",
    "solve_brent",
    "solve_contraction",
    "solve_iqr",
    "solve_nested",
    "solve_residual_min",
    "solve_weighted_qr",
    "subgradient_bound",
    "tsls",
    "tsls_with_se",
    "unreparametrize",
]
