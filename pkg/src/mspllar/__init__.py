"""Regime-switching Poisson log-linear autoregression for count time series.

Simulation, approximate filtering over the expanded pair-state chain,
quasi-maximum-likelihood estimation, regime inference, prediction,
diagnostics and a Monte-Carlo study harness, plus a CSV-driven CLI.
"""

from ._kernels import KERNEL
from .estimation import (
    FitResult,
    delta_method_se,
    fit,
    multi_start,
    numerical_hessian,
    order_states,
    to_constrained,
    to_unconstrained,
    wald_test,
)
from .filtering import (
    FilterTrace,
    initialize_filter,
    quasi_log_likelihood,
)
from .inference import (
    DiagnosticsReport,
    PredictionSeries,
    StateProbabilities,
    covariate_effect_trajectory,
    diagnostics,
    filter_marginals,
    forecast,
    intensity_decomposition,
    kim_smoother,
    marginal_state_probs,
    one_step_marginals,
    predict_one_step,
    predict_smoothed_insample,
    smoothing_marginals,
)
from .model import (
    ExpandedChain,
    ModelSpec,
    ParameterSet,
    build_expanded_chain,
    count_free_parameters,
    linear_predictor_step,
    stationary_distribution,
    stationary_distribution_expanded,
)
from .simulation import (
    CASE1,
    CASE2,
    SimulationOutput,
    StudyReport,
    brute_force_likelihood,
    monte_carlo_study,
    simulate_chain,
    simulate_ms_pllar,
)

__version__ = "0.1.0"

__all__ = [
    "CASE1",
    "CASE2",
    "DiagnosticsReport",
    "ExpandedChain",
    "FilterTrace",
    "FitResult",
    "KERNEL",
    "ModelSpec",
    "ParameterSet",
    "PredictionSeries",
    "SimulationOutput",
    "StateProbabilities",
    "StudyReport",
    "brute_force_likelihood",
    "build_expanded_chain",
    "count_free_parameters",
    "covariate_effect_trajectory",
    "delta_method_se",
    "diagnostics",
    "filter_marginals",
    "fit",
    "forecast",
    "initialize_filter",
    "intensity_decomposition",
    "kim_smoother",
    "linear_predictor_step",
    "marginal_state_probs",
    "monte_carlo_study",
    "multi_start",
    "numerical_hessian",
    "one_step_marginals",
    "order_states",
    "predict_one_step",
    "predict_smoothed_insample",
    "quasi_log_likelihood",
    "simulate_chain",
    "simulate_ms_pllar",
    "smoothing_marginals",
    "stationary_distribution",
    "stationary_distribution_expanded",
    "to_constrained",
    "to_unconstrained",
    "wald_test",
]
