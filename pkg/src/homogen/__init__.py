"""Numerical homogenization of second-order elliptic operators with drift and potential terms."""

__version__ = "0.1.0"

from .cell import CellSolution, HomogenizedCoefficients, homogenized_coefficients, solve_correctors
from .errors import (ConfigurationError, DegenerateFitError, HomogenError, HypothesisViolation,
                     InsufficientDataError, SolverError)
from .fields import CoefficientField
from .solver import DiscreteField, ProblemSpec, compute_mu0

__all__ = [
    "CellSolution", "CoefficientField", "ConfigurationError", "DegenerateFitError",
    "DiscreteField", "HomogenError", "HomogenizedCoefficients", "HypothesisViolation",
    "InsufficientDataError", "ProblemSpec", "SolverError", "compute_mu0",
    "homogenized_coefficients", "solve_correctors", "__version__",
]
