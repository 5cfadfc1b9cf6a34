"""Exception hierarchy shared by every module of the package."""


class TwoFluidError(Exception):
    """Base class for all package errors."""


class DomainError(TwoFluidError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(TwoFluidError, ValueError):
    """A grid, profile or run configuration cannot be used."""


class ConvergenceError(TwoFluidError, RuntimeError):
    """An iterative solver failed to reach its tolerance.

    ``bracket`` carries the last enclosing interval(s) when available.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class StateError(TwoFluidError, RuntimeError):
    """A field state is invalid at some grid point (e.g. a closure failure)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericalAbort(TwoFluidError, RuntimeError):
    """A time integration was aborted (NaN/Inf or blow-up)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}
