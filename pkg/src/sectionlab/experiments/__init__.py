"""Experiment harness: configuration, solution families, estimate runs and reports"""

from .config import ExperimentConfig, load_config
from .estimates import RunStatus
from .runner import EXIT_CODES, ExperimentOutcome, ExperimentRunner, run_experiment

# Experiment exports
__all__ = [
    "EXIT_CODES",
    "ExperimentConfig",
    "ExperimentOutcome",
    "ExperimentRunner",
    "RunStatus",
    "load_config",
    "run_experiment",
]
