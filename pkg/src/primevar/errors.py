"""Exception and warning types shared across the package."""


class PrimevarError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PrimevarError, ValueError):
    pass


class GuardViolation(InvalidArgument):
    """An ensemble breaks the ``m*h << N log N`` systematic-error guard."""


class RankDeficientError(PrimevarError):
    pass


class ConvergenceError(PrimevarError):
    """Raised by the nonlinear fit; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SchemaError(PrimevarError):
    pass


class ScaleWarning(UserWarning):
    """A formula was evaluated outside the regime it is meant for."""
