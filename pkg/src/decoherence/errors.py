"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""
from __future__ import annotations


class DecoherenceError(Exception):
    """Base class for package errors."""


class ConfigError(DecoherenceError, ValueError):
    """Invalid experiment configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(DecoherenceError, RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class FitError(NumericalError):
    """Least-squares fit failed; ``best`` holds the best iterate, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class QuadratureError(NumericalError):
    pass


class SolverError(NumericalError):
    pass


class NotCrossedError(NumericalError):
    """A trace never reaches the requested threshold (extend the time range)."""


class ExpansionInvalidError(NumericalError):
    """Second-order width expansion left its domain of validity."""


class DegenerateSpectrumError(NumericalError, ValueError):
    pass


class CoefficientDomainError(NumericalError):
    pass
