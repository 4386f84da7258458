"""Exception types raised across the package."""


class BPFidelityError(Exception):
    """Base class for all package errors."""


class DimensionError(BPFidelityError, ValueError):
    """Vector length does not match the operator dimensions."""


class ShapeError(BPFidelityError, ValueError):
    """A 2D image shape is required but missing or inconsistent."""


class UnsupportedScale(BPFidelityError):
    """The requested dense computation exceeds the supported size."""


class NumericalError(BPFidelityError, ArithmeticError):
    """Non-finite values appeared during an iterative computation."""


class ConvergenceError(BPFidelityError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Attributes:
        residual: relative residual norm at the last iteration.
        iterations: number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
