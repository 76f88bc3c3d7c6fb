"""Durations of bid-ask spread deviations: order book replay, censored
log-normal AFT regression and best-subset covariate selection."""

from .aft import FitResult, SurvivalData, fit_mle, gradient, log_likelihood, survival_function
from .book import LobEvent, OrderBook
from .covariates import COVARIATE_NAMES, DesignMatrix, DesignParams, build_design_matrix, standardize
from .deviations import DeviationEpisode, Threshold, compute_threshold, extract_episodes
from .ingest import DayLog, ValidationReport, parse_event_log, serialize_event_log, validate_log
from .selection import best_subset_per_size, exhaustive_subsets, finalize_selection
from .synthetic import SyntheticConfig, generate_synthetic_day

__version__ = "0.1.0"

__all__ = [
    "COVARIATE_NAMES", "DayLog", "DesignMatrix", "DesignParams", "DeviationEpisode", "FitResult",
    "LobEvent", "OrderBook", "SurvivalData", "SyntheticConfig", "Threshold", "ValidationReport",
    "best_subset_per_size", "build_design_matrix", "compute_threshold", "exhaustive_subsets",
    "extract_episodes", "finalize_selection", "fit_mle", "generate_synthetic_day", "gradient",
    "log_likelihood", "parse_event_log", "serialize_event_log", "standardize", "survival_function",
    "validate_log",
]
