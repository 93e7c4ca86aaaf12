"""Exception types raised by pdmlab."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""


class IntegrationDivergedError(NumericalError):
    """The closed-loop state became non-finite during integration."""

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"integration diverged at t={time:.6g}")


class RateBoundViolatedError(NumericalError):
    """A switch acceptance probability exceeded one (rate bound too small)."""
