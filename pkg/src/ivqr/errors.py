"""Shared exceptions and warnings for the ivqr package."""


class IvqrError(Exception):
    """Base class for all ivqr errors."""


class NonFiniteError(IvqrError):
    """Raised when an input array contains NaN or Inf."""


class RankDeficientError(IvqrError):
    """Raised when a design matrix does not have full column rank."""


class NonPositiveWeightError(IvqrError):
    """Raised when a quantile-regression weight is zero or negative."""


class NoInterceptError(IvqrError):
    """Raised when a coefficient shift requires an intercept column that is absent."""


class CovarianceNotPDError(IvqrError):
    """Raised when a configured covariance matrix is not positive definite."""


class TooManyFailuresError(IvqrError):
    """Raised when more than 10% of bootstrap replications fail to converge."""


class InsufficientDrawsError(IvqrError):
    """Raised when too few bootstrap draws are available for a percentile interval."""


class GridTooCoarseWarning(UserWarning):
    """Emitted when a grid search selects a point on the grid boundary."""
