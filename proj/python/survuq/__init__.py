"""Survival analysis with uncertainty quantification.

Thin Python face of the C++ core: experiment orchestration plus the
individual estimators and metrics for interactive use.
"""

from survuq._core import (
    SurvuqError,
    breslow_baseline,
    chi_square_p,
    concordance_td,
    config_hash,
    hyper_search,
    kaplan_meier,
    median_survival_time,
    partial_log_likelihood,
    plm_gradient,
    quantile_linear,
    run_experiment,
    synth_generate,
)

__version__ = "0.1.0"

__all__ = [
    "SurvuqError",
    "breslow_baseline",
    "chi_square_p",
    "concordance_td",
    "config_hash",
    "hyper_search",
    "kaplan_meier",
    "median_survival_time",
    "partial_log_likelihood",
    "plm_gradient",
    "quantile_linear",
    "run_experiment",
    "synth_generate",
]
