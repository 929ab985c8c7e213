"""Exception hierarchy shared by every simplexq module."""

from __future__ import annotations


class SimplexQError(Exception):
    """Base class for all library errors."""


class ParameterError(SimplexQError, ValueError):
    """An argument is outside the domain of the operation."""


class InfiniteMomentError(SimplexQError, ValueError):
    """A requested moment of a service law does not exist."""


class InstabilityError(SimplexQError):
    """A queue (or sub-queue) is not stable at the requested load.

    ``utilization`` carries the offending load value when one is known and
    ``where`` names the sub-queue for composite models.
    """

    def __init__(self, message: str, utilization: float | None = None, where: str | None = None):
        super().__init__(message)
        self.utilization = utilization
        self.where = where


class DegenerateRegimeError(SimplexQError):
    """A recursive estimator left its admissible range."""


class DivergenceError(InstabilityError):
    """A fixed-point iteration failed to converge to a stable solution."""


class NumericError(SimplexQError, ArithmeticError):
    """Quadrature or linear algebra failed."""


class ConsistencyError(SimplexQError, AssertionError):
    """An internal invariant check failed."""


class ConfigError(SimplexQError, ValueError):
    """Invalid simulation or experiment configuration.

    ``key`` names the offending field when there is one.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
