"""Best-linear-approximation identification and distortion contribution analysis."""

__version__ = "0.1.0"


class BladcaError(Exception):
    """Base class for errors raised by this package."""


class StructuralError(BladcaError, ValueError):
    """Shapes, grids or dimensions do not fit together."""


class DomainError(BladcaError, ValueError):
    """A numeric argument lies outside the admissible domain."""


class NumericalError(BladcaError, ArithmeticError):
    """Non-convergence or a singular linear system."""

    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate
