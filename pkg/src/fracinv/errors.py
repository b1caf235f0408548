"""Exception hierarchy shared by all modules."""


class FracInvError(Exception):
    """Base class for every error raised by the package."""


class DomainError(FracInvError, ValueError):
    """A parameter lies outside the range where an operation is defined."""


class EvaluationError(FracInvError, ArithmeticError):
    """A special-function evaluation failed to converge."""

    def __init__(self, message, regime=None):
        super().__init__(message if regime is None else f"{message} (regime: {regime})")
        self.regime = regime


class NumericalError(FracInvError, ArithmeticError):
    """An integrator, root finder or fixed-point iteration failed."""


class SpectralError(NumericalError):
    """The eigenvalue audit detected a missed or duplicated eigenvalue."""


class UsageError(FracInvError, ValueError):
    """Inconsistent inputs (grid mismatch, missing data, under-determined fit)."""


class FitError(FracInvError):
    """A trace fit did not reach the required residual."""


class ConfigError(FracInvError, ValueError):
    """A configuration file could not be parsed or validated.

    ``errors`` holds ``(line_number, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors]
        super().__init__("\n".join(lines))


class ConditioningWarning(UserWarning):
    """Nearly collinear amplitude columns in a variable-projection fit."""


class BiasWarning(UserWarning):
    """A truncated data window biases a transformed quantity."""


class IllPosednessWarning(UserWarning):
    """A deconvolution kernel vanishes at the origin."""
