"""Exception hierarchy.

Errors are grouped by how the command-line layer reports them: bad input
(exit code 2), numerical failure (exit code 3), and resampling
instability (exit code 4).
"""

from __future__ import annotations


class SynferError(Exception):
    """Base class for all package errors."""


class InputError(SynferError):
    """Malformed or inconsistent user input (files, labels, flags)."""


class NumericalError(SynferError):
    """A numerical precondition failed or an iteration did not converge."""


class InstabilityError(SynferError):
    """Too many resampling replicates or repetitions failed."""


class RankDeficient(NumericalError):
    """A design matrix has (numerically) linearly dependent columns.

    `column` names the offending column when it can be identified.
    """

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class SingularGram(NumericalError):
    """The covariate block of a Gram matrix is not positive definite."""


class DegreesOfFreedom(NumericalError):
    """Too few observations relative to the number of coefficients."""


class DomainViolation(NumericalError):
    """A linear predictor left the domain of the mean function."""


class Overflow(NumericalError):
    """The mean function would overflow double precision."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed; `pivot` is the 0-based failing index."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NonConvergence(NumericalError):
    """Newton iteration exhausted its budget; `trace` holds the residual log."""

    def __init__(self, message: str, trace: tuple[float, ...] = ()):
        super().__init__(message)
        self.trace = trace


class SingularInformation(NumericalError):
    """The observed information matrix is singular at an iterate."""


class Separation(NumericalError):
    """Diverging coefficients, indicating complete separation."""


class InvalidDf(NumericalError):
    """Wishart degrees of freedom below the matrix dimension."""


class MissingOutcome(InputError):
    """An operation needed synthetic outcomes that were not provided."""


class BootstrapUnstable(InstabilityError):
    """More than the tolerated share of bootstrap replicates failed."""


class ExperimentUnstable(InstabilityError):
    """More than the tolerated share of simulation repetitions failed."""
