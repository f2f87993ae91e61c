"""Differentially private synthetic tabular data from marginal queries."""

from ._gemplus import (
    BudgetError,
    ConfigError,
    DataError,
    FitResult,
    GemplusError,
    NumericError,
    Table,
    all_k_way,
    calibrate_round,
    cmd_evaluate,
    cmd_fit,
    cmd_generate,
    downward_closure,
    eps_delta_to_rho,
    fit,
    fit_baseline,
    workload_error,
)

__all__ = [
    "BudgetError",
    "ConfigError",
    "DataError",
    "FitResult",
    "GemplusError",
    "NumericError",
    "Table",
    "all_k_way",
    "calibrate_round",
    "cmd_evaluate",
    "cmd_fit",
    "cmd_generate",
    "downward_closure",
    "eps_delta_to_rho",
    "fit",
    "fit_baseline",
    "workload_error",
]
