"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3, I/O failures with 4.
"""


class MarketModelError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MarketModelError, ValueError):
    """Invalid agent roster, covariance or scenario description."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class StructuralError(MarketModelError, ValueError):
    """Malformed input path, e.g. a history that does not reach the current step."""


class NumericalError(MarketModelError, ArithmeticError):
    """A root-find or fixed-point iteration failed to converge."""


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
