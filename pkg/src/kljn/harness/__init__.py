"""Configuration, deterministic experiment runs, statistics and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .experiments import Report, run_experiment
from .stats import wilson_interval

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Report",
    "load_config",
    "parse_config",
    "run_experiment",
    "serialize_config",
    "wilson_interval",
]
