"""Experiment orchestration: configs, scenario runs and the command line."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .scenario import ReportBundle, Verdict, run_scenario

__all__ = ["ConfigError", "ExperimentConfig", "ReportBundle", "Verdict", "load_config", "parse_config",
           "run_scenario"]
