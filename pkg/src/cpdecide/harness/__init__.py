"""Experiment runner: config ingestion, canned experiments and CSV output."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import (
    run_calibration,
    run_coverage,
    run_experiment,
    run_private_signal,
    run_strategies,
    run_voi,
)
from .results import ResultTable

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "run_calibration",
    "run_coverage",
    "run_experiment",
    "run_private_signal",
    "run_strategies",
    "run_voi",
    "ResultTable",
]
