"""Semantic exception hierarchy for the aloe package."""


class AloeError(Exception):
    """Base class for all errors raised by this package."""


class UnsampleableEventError(AloeError):
    """The event probability underflowed to zero, so conditioning on it is undefined.

    Callers should drop such events from the mixture instead of sampling them.
    """


class EmptyMixtureError(AloeError):
    """Every event probability is zero, so the union bound is zero and the
    union probability is exactly zero without any sampling."""


class InvalidWeightsError(AloeError, ValueError):
    """Mixture weights are negative, do not sum to one, or put mass on a
    zero-probability event."""


class InvalidDistributionError(AloeError, ValueError):
    """A purported distribution over event counts has negative mass or total
    mass above one."""


class NearSingularCovarianceError(AloeError):
    """A constraint direction carries (almost) no variance relative to the
    covariance scale, so its standardized threshold is ill-defined."""


class DegenerateConstraintError(AloeError):
    """A constraint has nonpositive variance under the given covariance."""


class DisconnectedNetworkError(AloeError):
    """The grid graph is not connected (its Laplacian has a repeated zero
    eigenvalue), so phase differences are not determined."""


class InfeasibleConstraintError(AloeError):
    """A deterministic (zero-variance) constraint is violated at the mean
    injection, so the system is infeasible with probability one."""


class InvalidSpecError(AloeError, ValueError):
    """A problem, benchmark, or grid-case description fails validation."""
