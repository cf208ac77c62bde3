class ArgmmError(Exception):
    """Base class for package errors."""


class ConfigError(ArgmmError, ValueError):
    """Invalid configuration or dimension mismatch."""


class DomainError(ArgmmError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. unstable AR)."""


class NumericalError(ArgmmError, ArithmeticError):
    """A numerical routine failed (singular system, non-finite likelihood, ...)."""

    def __init__(self, message: str, *, component: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.component = component
        self.iteration = iteration
