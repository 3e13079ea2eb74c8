"""Sparse linear surrogates of prediction ensembles via Wasserstein distances."""

__version__ = "0.1.0"

from .ensemble import (  # noqa: E402
    GaussianNeighborhood,
    KernelSpec,
    Neighborhood,
    ParameterDraws,
    conjugate_gaussian_posterior,
    gaussian_neighborhood,
    kernel_weights,
    predict_linear,
    simulate_predictors,
)
from .metrics import average_wasserstein, diagnostics, relative_mse, wasserstein_r2  # noqa: E402
from .ot import TransportPlan, exact_plan, hilbert_plan, rank1d_plan, wasserstein_distance  # noqa: E402
from .search import SubsetSearch, backward_stepwise, best_subsets, simulated_annealing  # noqa: E402
from .slim_a import CoefficientMatrix, FitPath, PenaltyConfig, SlimA, fit_slim_a  # noqa: E402
from .slim_p import SlimP, build_stats, quadratic_slim_p, solve_exact_mask, solve_relaxed_mask  # noqa: E402

__all__ = [
    "GaussianNeighborhood", "KernelSpec", "Neighborhood", "ParameterDraws",
    "conjugate_gaussian_posterior", "gaussian_neighborhood", "kernel_weights", "predict_linear",
    "simulate_predictors", "average_wasserstein", "diagnostics", "relative_mse", "wasserstein_r2",
    "TransportPlan", "exact_plan", "hilbert_plan", "rank1d_plan", "wasserstein_distance",
    "SubsetSearch", "backward_stepwise", "best_subsets", "simulated_annealing",
    "CoefficientMatrix", "FitPath", "PenaltyConfig", "SlimA", "fit_slim_a",
    "SlimP", "build_stats", "quadratic_slim_p", "solve_exact_mask", "solve_relaxed_mask",
]
