"""Exception hierarchy shared by all roacert modules."""


class RoaError(Exception):
    """Base class for every error raised by roacert."""


class ConfigError(RoaError, ValueError):
    """Invalid configuration, detected before any computation starts."""


class DimensionMismatch(RoaError, ValueError):
    pass


class StepUnderflow(RoaError, ArithmeticError):
    """Adaptive step size collapsed below the admissible minimum."""


class NonFiniteState(RoaError, ArithmeticError):
    pass


class UnknownSystem(RoaError, KeyError):
    pass


class NotEquilibrium(RoaError, ValueError):
    pass


class NotHurwitz(RoaError, ValueError):
    pass


class SingularSystem(RoaError, ArithmeticError):
    pass


class GridTooLarge(RoaError, MemoryError):
    pass


class TooManyUndetermined(RoaError, RuntimeError):
    """Too many dataset rows neither converged nor escaped."""


class NoValidLevel(RoaError, RuntimeError):
    """A level-selection bisection could not accept any level.

    ``witness`` holds the worst offending state and ``margin`` the value of
    the violated inequality there.
    """

    def __init__(self, message, witness=None, margin=None):
        super().__init__(message)
        self.witness = witness
        self.margin = margin


class FormatError(RoaError, ValueError):
    """A cache or coefficient file has the wrong magic, version or layout."""


class ExtrapolationWarning(UserWarning):
    """A Bernstein polynomial was evaluated outside its box."""
