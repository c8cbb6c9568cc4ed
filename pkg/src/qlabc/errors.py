"""Exception and warning types shared across the package."""

from __future__ import annotations


class QlabcError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(QlabcError):
    pass


class NotPositiveDefinite(QlabcError):
    pass


class DomainViolation(QlabcError):
    """A perturbed evaluation point left the declared domain of a map."""


class OutOfDomain(QlabcError):
    """Evaluation requested outside a fitted object's domain."""


class NonConverged(QlabcError):
    """Iterative solver ran out of iterations.

    Carries the best iterate seen (`best`) and its residual norm
    (`residual`) so callers can decide whether the partial answer is
    usable.
    """

    def __init__(self, message: str, best=None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InsufficientData(QlabcError):
    pass


class DegenerateDesign(QlabcError):
    pass


class DegenerateSample(QlabcError):
    pass


class OutsideImage(QlabcError):
    """A statistic vector has no preimage under the fitted forward map."""


class InitFailed(QlabcError):
    """Chain initialisation from the observed statistic failed."""


class AllWeightsZero(QlabcError):
    pass


class SchemaMismatch(QlabcError):
    pass


class ConfigError(QlabcError):
    pass


class MonotonicityWarning(UserWarning):
    """Fitted scalar forward map is not monotone on the whole domain."""


class NonConvergedBackfit(UserWarning):
    """Backfitting hit the sweep limit before reaching tolerance."""


class CoverageWarning(UserWarning):
    """Observed statistic lies outside the fitted image of the pilot box."""
