"""Configuration, experiment commands and the command-line entry point."""

from .config import ConfigError, ExperimentConfig, load_config

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]
