"""Spectral laboratory for a compressible two-fluid model with capillarity."""

from .closure import (ClosureState, LinearCoefficients, ModelParams, PointwiseThermo,
                      closure_state, equilibrium_coefficients, pointwise_thermo, solve_rho_plus)
from .errors import (ConfigurationError, ConvergenceError, DomainError, NumericalAbort,
                     StateError, TwoFluidError)

__version__ = "0.1.0"

__all__ = [
    "ClosureState", "LinearCoefficients", "ModelParams", "PointwiseThermo",
    "closure_state", "equilibrium_coefficients", "pointwise_thermo", "solve_rho_plus",
    "ConfigurationError", "ConvergenceError", "DomainError", "NumericalAbort",
    "StateError", "TwoFluidError",
]
