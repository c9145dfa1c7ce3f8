"""Penalized partial likelihood estimation for Cox models with functional covariates."""

from .ace import AceResult, ThetaInference, ace_fit, info_bound, theta_ci
from .data import (
    Dataset,
    InvalidDataError,
    ParseError,
    SurvivalRecord,
    center,
    load_csv,
    load_grid_csv,
    risk_set,
    write_csv,
)
from .gcv import GcvResult, default_lambda_grid, gcv_score, select_lambda
from .grid import Grid, integrate, make_grid, make_uniform_grid
from .kernels import SobolevKernel, null_basis
from .simulate import (
    BetaBand,
    SimConfig,
    SimReport,
    SimulationError,
    beta0_on_grid,
    bootstrap_beta_band,
    gen_covariates,
    gen_survival,
    make_dataset,
    mse_beta,
    run_experiment,
    true_eta,
)
from .solver import (
    CoefVector,
    DesignSystem,
    FittedModel,
    NumericalError,
    build_design,
    eval_beta,
    fit,
    fit_design,
    gradient_hessian,
    neg_log_partial_lik,
)

__version__ = "0.1.0"

__all__ = [
    "AceResult",
    "BetaBand",
    "CoefVector",
    "Dataset",
    "DesignSystem",
    "FittedModel",
    "GcvResult",
    "Grid",
    "InvalidDataError",
    "NumericalError",
    "ParseError",
    "SimConfig",
    "SimReport",
    "SimulationError",
    "SobolevKernel",
    "SurvivalRecord",
    "ThetaInference",
    "ace_fit",
    "beta0_on_grid",
    "bootstrap_beta_band",
    "build_design",
    "center",
    "default_lambda_grid",
    "eval_beta",
    "fit",
    "fit_design",
    "gcv_score",
    "gen_covariates",
    "gen_survival",
    "gradient_hessian",
    "info_bound",
    "integrate",
    "load_csv",
    "load_grid_csv",
    "make_dataset",
    "make_grid",
    "make_uniform_grid",
    "mse_beta",
    "neg_log_partial_lik",
    "null_basis",
    "risk_set",
    "run_experiment",
    "select_lambda",
    "theta_ci",
    "true_eta",
    "write_csv",
]
