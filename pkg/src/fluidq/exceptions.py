class FluidQError(Exception):
    """Base class for errors raised by fluidq."""


class ModelError(FluidQError, ValueError):
    """Invalid or unsupported model (bad parameters, instability, reducibility)."""


class NumericalError(FluidQError, ArithmeticError):
    """A numerical procedure failed to converge or bracket a root."""


class ConvergenceError(NumericalError):
    """Fixed-point iteration exceeded its iteration budget.

    Attributes
    ----------
    residual : float
        Largest absolute fixed-point residual at the last iterate.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
