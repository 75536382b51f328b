"""Regime-switching model for multivariate ICU time series: synthetic data
generation, Metropolis-within-Gibbs posterior inference with a
forward-proposal latent-state sampler, missing-data imputation, and
ROC-based threshold calibration for the hemorrhage state."""

from .diagram import ADJ_3, ADJ_5, EDGES_3, EDGES_5, adjacency
from .engine import (ChainConfig, FitResult, GibbsChain, chain_medians,
                     params_from_medians, run_chain, run_decode)
from .evaluate import (BenchConfig, PosteriorSummary, bench_samplers,
                       calibration_report, modal_accuracy, probs_from_tallies,
                       roc_and_threshold, sens_spec_at, summarize_decode)
from .model import (EncounterData, GlobalParams, InvalidDataError, Label,
                    PriorConfig, StateSequence, SubjectState,
                    stationary_covariance, transition_matrix)
from .paths import PathSet, count_paths, enumerate_paths
from .simple_fit import SimpleFitResult, fit_simple
from .simulate import SimConfig, SimResult, load_truth, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ADJ_3", "ADJ_5", "EDGES_3", "EDGES_5", "adjacency",
    "ChainConfig", "FitResult", "GibbsChain", "chain_medians",
    "params_from_medians", "run_chain", "run_decode",
    "BenchConfig", "PosteriorSummary", "bench_samplers",
    "calibration_report", "modal_accuracy", "probs_from_tallies",
    "roc_and_threshold", "sens_spec_at", "summarize_decode",
    "EncounterData", "GlobalParams", "InvalidDataError", "Label",
    "PriorConfig", "StateSequence", "SubjectState",
    "stationary_covariance", "transition_matrix",
    "PathSet", "count_paths", "enumerate_paths",
    "SimpleFitResult", "fit_simple",
    "SimConfig", "SimResult", "load_truth", "simulate_dataset",
    "__version__",
]
