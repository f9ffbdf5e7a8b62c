"""The at-least-one-rare-event (ALOE) mixture estimator and its exact
variance identities.

Sampling scheme: pick event j with probability P_j / mu_bar (mu_bar being
the union bound, the sum of all event probabilities), draw x conditionally
on event j, and record S(x), the number of events holding at x.  The
estimate

    mu_hat = (mu_bar / n) * sum_i 1 / S(x_i)

is unbiased for the union probability mu, and since 1 <= S <= J every run
satisfies mu_bar / J <= mu_hat <= mu_bar with probability one.  Its
one-sample variance is exactly

    mu_bar * sum_s T_s / s - mu^2,       T_s = Pr(S(x) = s),

which is at most mu * (mu_bar - mu), and at most mu^2 (J + 1/J - 2) / 4
regardless of how the events overlap.  All of these are exposed as
executable quantities below.

Draws are organized in fixed-size blocks, each fed by its own keyed
substream, so results do not depend on the processing chunk size or on how
many worker threads run the blocks.  For the proportional-weight estimator
the histogram of S determines mean and standard error exactly; the
sub-event and general-mixture estimators accumulate streaming
(Welford-style) block merges instead.  Memory stays O(J) regardless of n.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMixtureError, InvalidDistributionError, InvalidWeightsError
from .events import EventSystem, HalfSpaceProblem
from .streams import DiscreteSampler, RandomStream

__all__ = [
    "AloeEstimate",
    "MixtureWeights",
    "MixtureEstimate",
    "SubEventEstimate",
    "MomentIdentity",
    "NominalMCResult",
    "estimate",
    "estimate_subevent",
    "estimate_general_mixture",
    "nominal_monte_carlo",
    "theoretical_variance",
    "moment_identity_check",
    "lemma_bound",
    "interval_product_bound",
    "product_moment",
    "satisfies_lemma_bound",
]

logger = logging.getLogger(__name__)

# Samples per keyed substream block.  Fixed (not user-tunable) so that the
# draw sequence is a function of (seed, stream_id) alone.
_RNG_BLOCK = 4096


@dataclass(frozen=True)
class AloeEstimate:
    """Result of one estimator run, with every bound the theory provides.

    ``hard_range`` holds [mu_bar/J, mu_bar], which contains mu_hat with
    probability one (not statistically -- by construction).
    ``var_bound_theorem`` is the plug-in bound mu_hat*(mu_bar - mu_hat)/n;
    ``var_bound_lemma`` is mu_hat^2 (J + 1/J - 2)/(4n), the worst case over
    all overlap patterns; ``cv_bound`` is the planning bound
    min(sqrt(mu_bar/mu_lower - 1), sqrt(J - 1)) / sqrt(n) on the coefficient
    of variation, computable before sampling.

    ``degenerate`` flags runs where every draw hit the same event count, so
    the sample standard error is exactly zero even though mu_hat is only
    known to lie in the hard range.
    """

    mu_hat: float
    se: float
    n: int
    union_bound: float
    lower_bound: float
    hard_range: tuple[float, float]
    s_histogram: np.ndarray
    var_bound_theorem: float
    var_bound_lemma: float
    cv_bound: float
    seed: tuple[int, int]
    degenerate: bool

    @property
    def n_events(self) -> int:
        return self.s_histogram.size - 1

    @property
    def s_ge_2_fraction(self) -> float:
        """Fraction of draws where two or more events held."""
        return float(self.s_histogram[2:].sum() / self.n)

    def t_hat(self) -> np.ndarray:
        """Empirical distribution of S under the mixture (index = count)."""
        return self.s_histogram / self.n

    def to_dict(self) -> dict:
        hist = {
            str(s): int(c) for s, c in enumerate(self.s_histogram) if c and s > 0
        }
        return {
            "mu_hat": self.mu_hat,
            "se": self.se,
            "n": self.n,
            "union_bound": self.union_bound,
            "lower_bound": self.lower_bound,
            "hard_range": list(self.hard_range),
            "s_histogram": hist,
            "var_bound_theorem": self.var_bound_theorem,
            "var_bound_lemma": self.var_bound_lemma,
            "cv_bound": self.cv_bound,
            "seed": list(self.seed),
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class MixtureWeights:
    """Nonnegative mixture weights summing to one."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.ascontiguousarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size == 0:
            raise InvalidWeightsError("weights must form a nonempty vector")
        if not np.all(np.isfinite(alpha)) or np.any(alpha < 0.0):
            raise InvalidWeightsError("weights must be finite and nonnegative")
        if abs(float(alpha.sum()) - 1.0) > 1e-9:
            raise InvalidWeightsError(f"weights sum to {alpha.sum()!r}, expected 1")
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class MixtureEstimate:
    """Estimate under arbitrary mixture weights (no hard-range guarantee)."""

    mu_hat: float
    se: float
    n: int
    union_bound: float
    seed: tuple[int, int]
    values: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SubEventEstimate:
    """Estimate of the probability mass of f inside the union of events."""

    nu_hat: float
    se: float
    n: int
    union_bound: float
    seed: tuple[int, int]


@dataclass(frozen=True)
class MomentIdentity:
    """Both sides of E[(mu_bar/S)^k] = sum_s T_s (mu_bar/s)^(k-1)."""

    k: int
    empirical: float
    predicted: float
    empirical_se: float


class _Welford:
    """Streaming mean/M2 with associative block merges."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def merge_block(self, count: int, mean: float, m2: float) -> None:
        if count == 0:
            return
        total = self.count + count
        delta = mean - self.mean
        self.mean += delta * (count / total)
        self.m2 += m2 + delta * delta * (self.count * count / total)
        self.count = total

    @staticmethod
    def block_stats(values: np.ndarray) -> tuple[int, float, float]:
        mean = float(values.mean())
        return values.size, mean, float(np.sum((values - mean) ** 2))

    def standard_error(self) -> float:
        # n-1 divisor; a single draw carries no spread information.
        if self.count < 2 or self.m2 <= 0.0:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


def _blocks(n: int):
    """Yield (block_index, samples_in_block) covering n samples."""
    full, rem = divmod(n, _RNG_BLOCK)
    for beta in range(full):
        yield beta, _RNG_BLOCK
    if rem:
        yield full, rem


def _retained_probabilities(system: EventSystem) -> tuple[np.ndarray, float]:
    probs = np.asarray(system.event_probabilities, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise EmptyMixtureError("the event system exposes no events")
    if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
        raise InvalidDistributionError("event probabilities must be finite and >= 0")
    mu_bar = float(probs.sum())
    if mu_bar <= 0.0:
        raise EmptyMixtureError(
            "every event probability is 0; the union probability is exactly 0"
        )
    return probs, mu_bar


def _run_blocks(n, stream, worker, threads):
    """Run ``worker(block_index, size)`` over all blocks, merging results in
    block order regardless of how many threads execute them."""
    plan = list(_blocks(n))
    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda bc: worker(*bc), plan))
    return [worker(*bc) for bc in plan]


def estimate(
    system: EventSystem,
    n: int,
    stream: RandomStream,
    *,
    block_size: int = 1024,
    threads: int = 1,
) -> AloeEstimate:
    """Run the mixture estimator with the proportional weights P_j / mu_bar.

    Parameters
    ----------
    system : the events to sample; probabilities of exactly 0 are excluded
        from the mixture automatically.
    n : number of conditional draws.
    stream : reproducibility key; the same (seed, stream_id) always yields
        the same estimate.
    block_size : processing chunk for the event-count matrix product.  Has
        no effect on the result, only on peak memory.
    threads : worker threads over sample blocks; any value yields identical
        results.

    Raises EmptyMixtureError when the union bound is 0 (then the union
    probability is 0 and there is nothing to sample).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    probs, mu_bar = _retained_probabilities(system)
    j_count = probs.size
    sampler = DiscreteSampler(probs / mu_bar)

    hist = np.zeros(j_count + 1, dtype=np.int64)

    def worker(beta: int, size: int):
        rng = stream.block_generator(beta)
        js = sampler.draw_array(rng, size)
        _, counts = system.draw_conditional_block(js, rng, chunk=block_size)
        return np.bincount(counts, minlength=j_count + 1)

    for block_hist in _run_blocks(n, stream, worker, threads):
        hist += block_hist

    # Every per-sample value is mu_bar/s for an observed count s, so the
    # histogram determines mean and spread exactly: the result cannot depend
    # on block sizes, thread count, or summation order.
    s_values = np.arange(1, j_count + 1, dtype=float)
    counts = hist[1:].astype(float)
    per_count_value = mu_bar / s_values
    occupied = np.nonzero(hist[1:])[0]
    if occupied.size == 1:
        mean = float(per_count_value[occupied[0]])
        spread = 0.0
    else:
        mean = mu_bar * (float(counts @ (1.0 / s_values)) / n)
        spread = float(counts @ (per_count_value - mean) ** 2)

    lo = mu_bar * (1.0 / j_count)
    assert lo * (1.0 - 1e-9) <= mean <= mu_bar * (1.0 + 1e-9), (
        f"estimator mean {mean} escaped its almost-sure range [{lo}, {mu_bar}]"
    )
    mu_hat = min(max(mean, lo), mu_bar)
    se = math.sqrt(spread / (n - 1) / n) if n > 1 and spread > 0.0 else 0.0
    # With a single event, mu_hat equals P_1 exactly and se = 0 is not a
    # defect; the degenerate flag is for J >= 2 runs that never mixed.
    degenerate = j_count > 1 and occupied.size == 1
    if degenerate:
        logger.warning(
            "all %d draws saw the same event count S=%d; the standard error "
            "is 0 while mu_hat is only guaranteed to lie in [%.3g, %.3g]",
            n,
            int(occupied[0] + 1),
            lo,
            mu_bar,
        )
    return AloeEstimate(
        mu_hat=mu_hat,
        se=se,
        n=n,
        union_bound=mu_bar,
        lower_bound=float(probs.max()),
        hard_range=(lo, mu_bar),
        s_histogram=hist,
        var_bound_theorem=mu_hat * (mu_bar - mu_hat) / n,
        var_bound_lemma=mu_hat * mu_hat * (j_count + 1.0 / j_count - 2.0) / (4.0 * n),
        cv_bound=min(
            math.sqrt(max(mu_bar / float(probs.max()) - 1.0, 0.0)),
            math.sqrt(j_count - 1.0),
        )
        / math.sqrt(n),
        seed=(stream.seed, stream.stream_id),
        degenerate=degenerate,
    )


def estimate_subevent(
    system: EventSystem,
    f,
    n: int,
    stream: RandomStream,
    *,
    block_size: int = 1024,
    threads: int = 1,
) -> SubEventEstimate:
    """Estimate nu = E[f(x)] for an indicator f supported inside the union.

    Averages mu_bar * f(x_i) / S(x_i) over the same draws ``estimate`` would
    make on this stream, so f identically 1 reproduces mu_hat exactly.  For
    indicator f the variance is at most nu * (mu_bar - nu) / n.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    probs, mu_bar = _retained_probabilities(system)
    sampler = DiscreteSampler(probs / mu_bar)
    acc = _Welford()

    def worker(beta: int, size: int):
        rng = stream.block_generator(beta)
        js = sampler.draw_array(rng, size)
        points, counts = system.draw_conditional_block(js, rng, chunk=block_size)
        f_vals = np.fromiter((float(f(x)) for x in points), dtype=float, count=size)
        return _Welford.block_stats((mu_bar * f_vals) / counts)

    for stats in _run_blocks(n, stream, worker, threads):
        acc.merge_block(*stats)

    nu_hat = min(max(acc.mean, 0.0), mu_bar)
    return SubEventEstimate(
        nu_hat=nu_hat,
        se=acc.standard_error(),
        n=n,
        union_bound=mu_bar,
        seed=(stream.seed, stream.stream_id),
    )


def estimate_general_mixture(
    system: EventSystem,
    weights: MixtureWeights | np.ndarray,
    n: int,
    stream: RandomStream,
    *,
    block_size: int = 1024,
    threads: int = 1,
    keep_values: bool = False,
) -> MixtureEstimate:
    """Mixture estimator under arbitrary weights alpha.

    Per-sample value 1 / sum_j alpha_j 1{x in H_j} / P_j; unbiased for the
    union probability whenever the weights are valid.  With the proportional
    weights alpha_j = P_j / mu_bar the values collapse to mu_bar / S(x) and
    this reproduces ``estimate`` on the same stream.  Exists to validate
    that collapse, not as a tuning surface.

    ``keep_values`` retains the n per-sample values for inspection (O(n)
    memory).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    probs, mu_bar = _retained_probabilities(system)
    if not isinstance(weights, MixtureWeights):
        weights = MixtureWeights(np.asarray(weights, dtype=float))
    alpha = weights.alpha
    if alpha.size != probs.size:
        raise InvalidWeightsError(
            f"{alpha.size} weights for {probs.size} events"
        )
    if np.any((alpha > 0.0) & (probs == 0.0)):
        raise InvalidWeightsError("weights must vanish on zero-probability events")
    # alpha_j / P_j, taken as 0 where alpha_j = 0 (those events are never
    # sampled and never intersect a drawn point with positive density).
    ratio = np.divide(alpha, probs, out=np.zeros_like(alpha), where=alpha > 0.0)
    sampler = DiscreteSampler(alpha)
    acc = _Welford()
    kept: list[np.ndarray] = []

    def worker(beta: int, size: int):
        rng = stream.block_generator(beta)
        js = sampler.draw_array(rng, size)
        points, _ = system.draw_conditional_block(js, rng, chunk=block_size)
        if isinstance(system, HalfSpaceProblem):
            denom = np.zeros(size, dtype=float)
            step = max(int(block_size), 1)
            for start in range(0, size, step):
                stop = min(start + step, size)
                denom[start:stop] = system.indicator_matrix(points[start:stop]) @ ratio
        else:
            denom = np.array(
                [float(system.event_indicators(x) @ ratio) for x in points]
            )
        return 1.0 / denom

    for values in _run_blocks(n, stream, worker, threads):
        acc.merge_block(*_Welford.block_stats(values))
        if keep_values:
            kept.append(values)

    return MixtureEstimate(
        mu_hat=acc.mean,
        se=acc.standard_error(),
        n=n,
        union_bound=mu_bar,
        seed=(stream.seed, stream.stream_id),
        values=np.concatenate(kept) if keep_values else None,
    )


@dataclass(frozen=True)
class NominalMCResult:
    """Plain Monte Carlo under the nominal law (the brute-force baseline)."""

    mu_hat: float
    se: float
    n: int
    t_hat: np.ndarray  # empirical Pr(S = s) for s = 0..J

    def t_hat_se(self) -> np.ndarray:
        """Binomial standard error of each entry of t_hat."""
        return np.sqrt(self.t_hat * (1.0 - self.t_hat) / self.n)


def nominal_monte_carlo(
    problem: HalfSpaceProblem,
    n: int,
    stream: RandomStream,
    *,
    block_size: int = 8192,
) -> NominalMCResult:
    """Estimate the union probability and the full distribution of S by
    unconditioned sampling.  Independent of the mixture path; used as an
    oracle against it."""
    if n < 1:
        raise ValueError("n must be at least 1")
    hist = np.zeros(problem.n_events + 1, dtype=np.int64)
    d = problem.dimension
    step = max(int(block_size), 1)
    done = 0
    beta = 0
    while done < n:
        size = min(step, n - done)
        rng = stream.block_generator(beta)
        points = rng.standard_normal((size, d))
        hist += np.bincount(
            problem.count_events_batch(points), minlength=problem.n_events + 1
        )
        done += size
        beta += 1
    mu_hat = float(1.0 - hist[0] / n)
    return NominalMCResult(
        mu_hat=mu_hat,
        se=math.sqrt(max(mu_hat * (1.0 - mu_hat), 0.0) / n),
        n=n,
        t_hat=hist / n,
    )


def theoretical_variance(t, mu_bar: float) -> float:
    """Exact one-sample variance of the estimator from the distribution of S.

    ``t`` gives T_s = Pr(S = s) for s = 1..J (index 0 of the array is s=1).
    Returns mu_bar * sum_s T_s / s - mu^2 with mu = sum_s T_s.  The same
    quantity factors through conditional product moments as

        mu^2 * (E[S | S>0] * E[1/S | S>0] - 1)

    using mu_bar = E[S]; both evaluations are computed and must agree to
    1e-12, as an internal identity check.
    """
    t = np.ascontiguousarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidDistributionError("t must be a nonempty vector of masses")
    if not np.all(np.isfinite(t)) or np.any(t < 0.0):
        raise InvalidDistributionError("masses must be finite and nonnegative")
    mu = float(t.sum())
    if mu > 1.0 + 1e-9:
        raise InvalidDistributionError(f"total mass {mu} exceeds 1")
    if not np.isfinite(mu_bar) or mu_bar < 0.0:
        raise InvalidDistributionError("mu_bar must be finite and nonnegative")
    s = np.arange(1, t.size + 1, dtype=float)
    inverse_moment = float((t / s).sum())
    direct = mu_bar * inverse_moment - mu * mu
    if mu > 0.0:
        product_form = mu * mu * ((mu_bar / mu) * (inverse_moment / mu) - 1.0)
        assert abs(direct - product_form) <= 1e-12 * max(1.0, abs(direct)), (
            "variance identity mismatch between direct and product-moment forms"
        )
    return direct


def moment_identity_check(
    system: EventSystem,
    k: int,
    n: int,
    stream: RandomStream,
    t_hat,
    *,
    block_size: int = 1024,
) -> MomentIdentity:
    """Check E[(mu_bar/S)^k] = sum_s T_s (mu_bar/s)^(k-1) empirically.

    ``t_hat`` is the distribution of S estimated by an *independent* plain
    Monte Carlo run (length J+1 including the mass at S=0, or length J for
    s
    = 1..J).  Returns both sides; the empirical side comes with its own
    standard error from the mixture draws.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    t_hat = np.ascontiguousarray(t_hat, dtype=float)
    est = estimate(system, n, stream, block_size=block_size)
    j_count = est.n_events
    if t_hat.size == j_count + 1:
        t_pos = t_hat[1:]
    elif t_hat.size == j_count:
        t_pos = t_hat
    else:
        raise InvalidDistributionError(
            f"t_hat has length {t_hat.size}, expected {j_count} or {j_count + 1}"
        )
    s = np.arange(1, j_count + 1, dtype=float)
    mu_bar = est.union_bound
    a = (mu_bar / s) ** k
    counts = est.s_histogram[1:]
    empirical = float(counts @ a) / n
    spread = float(counts @ (a - empirical) ** 2)
    emp_se = math.sqrt(spread / (n - 1) / n) if n > 1 else 0.0
    predicted = float(t_pos @ (mu_bar / s) ** (k - 1))
    return MomentIdentity(k=k, empirical=empirical, predicted=predicted, empirical_se=emp_se)


def lemma_bound(j_count: int) -> float:
    """Worst-case product moment (J + 1/J + 2)/4 for counts supported on
    {1..J}; attained exactly by the two-point law uniform on {1, J}."""
    if j_count < 1:
        raise ValueError("the event count must be at least 1")
    return (j_count + 1.0 / j_count + 2.0) / 4.0


def interval_product_bound(a: float, b: float) -> float:
    """Bound E[X] E[1/X] <= (a/b + b/a + 2)/4 for X supported on [a, b],
    0 < a <= b."""
    if not (0.0 < a <= b) or not math.isfinite(b):
        raise ValueError("need 0 < a <= b < infinity")
    return (a / b + b / a + 2.0) / 4.0


def product_moment(t) -> float:
    """E[S] * E[1/S] for a probability distribution t over s = 1..len(t)."""
    t = np.ascontiguousarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidDistributionError("t must be a nonempty vector of masses")
    if not np.all(np.isfinite(t)) or np.any(t < 0.0):
        raise InvalidDistributionError("masses must be finite and nonnegative")
    total = float(t.sum())
    if abs(total - 1.0) > 1e-9:
        raise InvalidDistributionError(f"masses sum to {total}, expected 1")
    s = np.arange(1, t.size + 1, dtype=float)
    return float((t @ s) * (t @ (1.0 / s))) / (total * total)


def satisfies_lemma_bound(t, slack: float = 1e-12) -> bool:
    """Whether the product moment of t respects the closed-form bound."""
    t = np.ascontiguousarray(t, dtype=float)
    return product_moment(t) <= lemma_bound(t.size) + slack
