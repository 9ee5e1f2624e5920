"""Stochastic Krasnosel'skii-Mann splitting for SAA with dependent samples."""

from . import bounds, engine, operators, processes
from .errors import (
    CapabilityError, ConfigError, ConvergenceError, DiagnosticError, ShapeError,
    SkmError, ValidationError,
)

__all__ = [
    "bounds", "engine", "operators", "processes", "CapabilityError", "ConfigError",
    "ConvergenceError", "DiagnosticError", "ShapeError", "SkmError", "ValidationError",
]
__version__ = "0.1.0"
