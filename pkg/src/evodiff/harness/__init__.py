"""Configuration, experiment orchestration and command-line entry point."""

from .config import ExperimentConfig, load_config, parse_config
from .experiment import RunManifest, emit_entropy_trajectory, run_experiment, seed_streams

__all__ = ["ExperimentConfig", "RunManifest", "emit_entropy_trajectory", "load_config",
           "parse_config", "run_experiment", "seed_streams"]
