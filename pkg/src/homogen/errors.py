"""Exception types shared across the package.

The CLI maps these onto exit codes, so every failure that can surface from a
run should derive from :class:`HomogenError`.
"""


class HomogenError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HomogenError, ValueError):
    pass


class HypothesisViolation(HomogenError, ValueError):
    """A coefficient field breaks its declared ellipticity or sup-norm bound."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class AssemblyError(HomogenError, IndexError):
    pass


class SolverError(HomogenError, RuntimeError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularMatrixError(SolverError):
    pass


class UnderResolutionError(ConfigurationError):
    def __init__(self, message, required_m=None):
        super().__init__(message)
        self.required_m = required_m


class TruncationError(HomogenError):
    """Defect support reaches into the outer boundary strip of the box."""


class SupportError(HomogenError):
    """Padded grid too narrow for the mollifier support."""


class DegenerateFitError(HomogenError, ValueError):
    pass


class InsufficientDataError(HomogenError):
    pass
