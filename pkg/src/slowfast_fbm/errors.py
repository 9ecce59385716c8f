"""Exception hierarchy shared across the package.

Each class maps onto one CLI exit code (see ``experiments.EXIT_CODES``).
"""


class SlowFastError(Exception):
    """Base class for all package errors."""


class DomainError(SlowFastError, ValueError):
    """An argument lies outside the domain of an operation."""


class PreconditionError(SlowFastError):
    """A documented precondition of an operation does not hold."""


class SimulationError(SlowFastError):
    """A trajectory left the finite range (overflow / NaN)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericalError(SlowFastError):
    """A numerical routine failed (non-PSD matrix, singular system...)."""


class ConfigError(SlowFastError):
    """Invalid experiment configuration."""


class ExpressionError(ConfigError):
    """Syntax or evaluation error in a coefficient expression."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
