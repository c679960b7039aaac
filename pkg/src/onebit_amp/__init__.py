"""Sparse recovery from sign measurements by AMP with built-in parameter estimation."""
from .engine import DivergenceError, SolveReport, solve
from .experiment import GridConfig, generate_problem, run_grid, snr_db
from .model import (
    GaussianComponent,
    InvalidParams,
    NoisePriorParams,
    Problem,
    SignalPriorParams,
    SolverConfig,
    build_problem,
)

__all__ = [
    "DivergenceError", "SolveReport", "solve",
    "GridConfig", "generate_problem", "run_grid", "snr_db",
    "GaussianComponent", "InvalidParams", "NoisePriorParams", "Problem",
    "SignalPriorParams", "SolverConfig", "build_problem",
]
__version__ = "0.1.0"
