"""Exception and warning types shared across the package."""


class PMPError(Exception):
    """Base class for all package errors."""


class OutOfDomain(PMPError):
    pass


class BasePointMismatch(PMPError):
    pass


class BlowUp(PMPError):
    pass


class NonFiniteState(PMPError):
    pass


class TubeEscape(PMPError):
    pass


class ChartMismatch(PMPError):
    pass


class GridTooCoarse(PMPError):
    pass


class BudgetExceeded(PMPError):
    pass


class NonConvergent(PMPError):
    pass


class UnsupportedSet(PMPError):
    pass


class NonUniqueProjection(PMPError):
    def __init__(self, message, minimizers=()):
        super().__init__(message)
        self.minimizers = list(minimizers)


class NotControllable(PMPError):
    pass


class NoProgress(PMPError):
    pass


class JacobianSingular(PMPError):
    pass


class ProblemFileError(PMPError):
    """Malformed problem file; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateWeight(UserWarning):
    """A relaxed-control atom with negligible weight was dropped."""
