"""Exception types shared across the package."""


class EaselectError(Exception):
    """Base class for all easelect errors."""


class NotPositiveDefinite(EaselectError):
    """A matrix expected to be symmetric positive definite is not.

    Raised on a nonpositive Cholesky pivot; callers treat the offending
    model as rank-deficient / inadmissible rather than aborting a run.
    """


class DomainError(EaselectError):
    """An argument lies outside the mathematical domain of a function."""


class DegreesOfFreedomError(EaselectError):
    """Too few observations for the requested matrix-t draw."""


class AllInadmissible(EaselectError):
    """Every candidate model carries zero mass; nothing to normalize."""


class CapExceeded(EaselectError):
    """Exhaustive subset search requested beyond its predictor cap."""


class InitializationFailed(EaselectError):
    """No admissible starting model was found for the sampler."""
