"""Mixture importance sampling for the probability of a union of rare events.

The estimator conditions every draw on at least one constituent event
occurring: pick event j with probability proportional to P_j, sample the
system given that event, and average union_bound / S(x) where S(x) counts
the events holding at the sample.  The estimate is unbiased, always lies in
[union_bound / J, union_bound], and its coefficient of variation is bounded
in terms of known quantities before any sampling happens.

Front ends cover Gaussian half-space unions (with whitening of general
Gaussian problems) and DC power-grid phase-violation probabilities.
"""

from .errors import (
    AloeError,
    DegenerateConstraintError,
    DisconnectedNetworkError,
    EmptyMixtureError,
    InfeasibleConstraintError,
    InvalidDistributionError,
    InvalidSpecError,
    InvalidWeightsError,
    NearSingularCovarianceError,
    UnsampleableEventError,
)
from .events import (
    EventSystem,
    GeneralGaussianSpec,
    HalfSpaceProblem,
    conditional_draw,
    event_count,
    load_problem,
    save_problem,
    whiten,
)
from .estimator import (
    AloeEstimate,
    MixtureEstimate,
    MixtureWeights,
    MomentIdentity,
    NominalMCResult,
    SubEventEstimate,
    estimate,
    estimate_general_mixture,
    estimate_subevent,
    interval_product_bound,
    lemma_bound,
    moment_identity_check,
    nominal_monte_carlo,
    product_moment,
    satisfies_lemma_bound,
    theoretical_variance,
)
from .gaussian import (
    log_normal_cdf,
    normal_cdf,
    normal_quantile,
    normal_quantile_from_log,
    sample_halfspace_conditional,
    sample_upper_truncated_normal,
    truncated_normal_cdf,
)
from .streams import DiscreteSampler, RandomStream, discrete_draw

__version__ = "0.1.0"

__all__ = [
    "AloeError",
    "AloeEstimate",
    "DegenerateConstraintError",
    "DiscreteSampler",
    "DisconnectedNetworkError",
    "EmptyMixtureError",
    "EventSystem",
    "GeneralGaussianSpec",
    "HalfSpaceProblem",
    "InfeasibleConstraintError",
    "InvalidDistributionError",
    "InvalidSpecError",
    "InvalidWeightsError",
    "MixtureEstimate",
    "MixtureWeights",
    "MomentIdentity",
    "NearSingularCovarianceError",
    "NominalMCResult",
    "RandomStream",
    "SubEventEstimate",
    "UnsampleableEventError",
    "conditional_draw",
    "discrete_draw",
    "estimate",
    "estimate_general_mixture",
    "estimate_subevent",
    "event_count",
    "interval_product_bound",
    "lemma_bound",
    "load_problem",
    "log_normal_cdf",
    "moment_identity_check",
    "nominal_monte_carlo",
    "normal_cdf",
    "normal_quantile",
    "normal_quantile_from_log",
    "product_moment",
    "sample_halfspace_conditional",
    "sample_upper_truncated_normal",
    "satisfies_lemma_bound",
    "save_problem",
    "theoretical_variance",
    "truncated_normal_cdf",
    "whiten",
]
