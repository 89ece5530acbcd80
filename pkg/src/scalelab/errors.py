"""Exception hierarchy shared by the solvers, state evolution and harness."""


class ScalelabError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(ScalelabError, ValueError):
    """Problem specification or configuration is malformed."""


class ConvergenceError(ScalelabError):
    """An iterative solver stopped before meeting its tolerance.

    The best iterate found so far is kept on the exception so callers can
    inspect it or decide to accept a looser answer.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history


class DivergenceError(ScalelabError):
    """Message passing blew up (overlap exceeded its sanity bound)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class RegimeError(ScalelabError):
    """The requested quantity has no solution in this parameter regime."""


class UnsupportedRegimeError(RegimeError):
    """The rate tables do not cover this regime (e.g. noiseless labels)."""


class NumericalQualityError(ScalelabError):
    """A numerical estimate failed its internal quality gate."""
