"""Exception types shared across the package."""


class SkmError(Exception):
    """Base class for all package errors."""


class CapabilityError(SkmError, TypeError):
    """A function kind does not support the requested operation."""


class ShapeError(SkmError, ValueError):
    """Dimensions of points, samples or operators disagree."""


class ValidationError(SkmError, ValueError):
    """An input violates its documented domain."""


class DiagnosticError(SkmError, RuntimeError):
    """A mixing diagnostic cannot be evaluated for the given chain."""


class ConfigError(SkmError, ValueError):
    """Malformed or unknown experiment configuration."""


class ConvergenceError(SkmError, RuntimeError):
    """An iterative solver hit its cap; ``best`` holds the last iterate."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
