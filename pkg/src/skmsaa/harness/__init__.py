"""Experiment harness: configuration, reference solutions, studies and charts."""

from .charts import emit_charts
from .config import ExperimentConfig, load_config, make_config, parse_config_text
from .coverage import CoverageReport, coverage_study
from .experiment import run_experiment, run_single
from .reference import ReferenceSolution, solve_reference

__all__ = [
    "emit_charts", "ExperimentConfig", "load_config", "make_config", "parse_config_text",
    "CoverageReport", "coverage_study", "run_experiment", "run_single", "ReferenceSolution",
    "solve_reference",
]
