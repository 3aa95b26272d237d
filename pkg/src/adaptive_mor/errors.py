"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """A precondition on shapes, ranges or configuration was violated."""


class NumericFailureError(ArithmeticError):
    """Non-finite values or a failed linear solve."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class PivotBreakdownError(NumericFailureError):
    """Incomplete factorization hit a zero pivot."""


class InterpolationDegeneracyError(NumericFailureError):
    """The interpolation matrix P^T U_f is singular."""


class RomInstabilityError(NumericFailureError):
    """A reduced trajectory became non-finite."""


class DegenerateRhoError(NumericFailureError):
    """Every time instance had a vanishing primal residual."""
