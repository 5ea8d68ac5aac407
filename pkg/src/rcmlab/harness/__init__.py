"""Experiment configuration, runners, verification suite and CLI."""

from .config import ExperimentConfig
from .experiments import run_experiment
from .verify import verify_suite
