"""Exception types shared across the package."""


class HbctError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(HbctError, ValueError):
    """Bad input: wrong shape, non-finite values, invalid config."""


class NumericalDomainError(HbctError, ArithmeticError):
    """A function argument left its valid domain by more than the clamp slack."""


class TrainingFailureError(HbctError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateBaselineError(HbctError, ArithmeticError):
    """Compatibility metric denominator vanished (old and star anchors coincide)."""
