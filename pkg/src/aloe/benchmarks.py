"""Analytic benchmark families: circumscribed polygons in the plane and
high-dimensional unions of random half-spaces with nearly independent events.

Both families come with reference values tight enough to measure the
estimator's relative error: the polygon's union probability is sandwiched by
chi-square tail bounds, and the high-dimensional family is engineered so the
union bound is essentially exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import InvalidSpecError
from .estimator import AloeEstimate, estimate
from .events import HalfSpaceProblem
from .gaussian import log_normal_cdf, normal_cdf
from .streams import RandomStream

__all__ = [
    "PolygonSpec",
    "PolygonReference",
    "HighDimSpec",
    "HighDimBuild",
    "make_polygon",
    "polygon_reference",
    "make_highdim",
    "build_highdim",
    "independent_reference",
    "PolygonBenchmarkRow",
    "run_polygon_benchmark",
    "HighDimCaseRow",
    "run_highdim_family",
    "load_polygon_spec",
    "load_highdim_spec",
]

# Reference convention for relative mean-square error: the upper bound is
# treated as exact once tau reaches this; below it the sandwich midpoint is
# used because the polygon gap is no longer negligible.
UPPER_BOUND_EXACT_TAU = 4.0


@dataclass(frozen=True)
class PolygonSpec:
    """Regular polygon of ``sides`` tangent lines circumscribed around the
    circle of radius ``tau``; the union of the outer half-planes is the
    complement of the polygon.

    ``angle_set="prime"`` replaces the equally spaced angles 2*pi*j/360 by
    2*pi*p/360 over the primes p below 360 (there are 72), producing a much
    less symmetric overlap pattern; it requires sides = 360.
    """

    sides: int
    tau: float
    angle_set: str = "full"

    def __post_init__(self):
        if self.sides < 3:
            raise InvalidSpecError("a polygon needs at least 3 sides")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise InvalidSpecError("tau must be positive and finite")
        if self.angle_set not in ("full", "prime"):
            raise InvalidSpecError("angle_set must be 'full' or 'prime'")
        if self.angle_set == "prime" and self.sides != 360:
            raise InvalidSpecError("the prime-angle variant is defined for 360 sides")


@dataclass(frozen=True)
class PolygonReference:
    """Sandwich exp(-tau^2/2) * (1 - gap/(2 pi)) <= mu <= exp(-tau^2/2)."""

    upper: float
    lower: float
    gap_area: float

    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _primes_below(limit: int) -> list[int]:
    sieve = np.ones(limit, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(limit**0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return [int(p) for p in np.nonzero(sieve)[0]]


def _polygon_angles(spec: PolygonSpec) -> np.ndarray:
    if spec.angle_set == "prime":
        primes = np.array(_primes_below(spec.sides), dtype=float)
        return 2.0 * np.pi * primes / spec.sides
    j = np.arange(1, spec.sides + 1, dtype=float)
    return 2.0 * np.pi * j / spec.sides


def make_polygon(spec: PolygonSpec) -> HalfSpaceProblem:
    """Half-space problem whose union is the complement of the polygon.

    Normals are (sin a, cos a) over the angle set, all with threshold tau;
    each boundary line is tangent to the circle of radius tau, so the origin
    sits inside every complement and S(0) = 0.
    """
    angles = _polygon_angles(spec)
    omega = np.column_stack([np.sin(angles), np.cos(angles)])
    tau = np.full(angles.size, float(spec.tau))
    return HalfSpaceProblem(omega, tau)


def polygon_reference(spec: PolygonSpec) -> PolygonReference:
    """Analytic sandwich for the probability outside the polygon.

    The squared radius of a standard bivariate normal is exponential, so the
    mass outside the inscribed circle is exactly exp(-tau^2/2), an upper
    bound.  The gap between circle and polygon is a union of tangent-line
    sectors: a sector spanning angle delta contributes
    tau^2 * (tan(delta/2) - delta/2), for a total of

        G = tau^2 * (sum_i tan(delta_i / 2) - pi),

    which for equal spacing reduces to (J tan(pi/J) - pi) tau^2.  The normal
    density inside the gap is at most exp(-tau^2/2)/(2 pi), giving the lower
    bound upper * (1 - G/(2 pi)).
    """
    tau2 = spec.tau * spec.tau
    if spec.angle_set == "full":
        gap = (spec.sides * math.tan(math.pi / spec.sides) - math.pi) * tau2
    else:
        angles = np.sort(_polygon_angles(spec))
        deltas = np.diff(angles, append=angles[0] + 2.0 * np.pi)
        if np.any(deltas >= np.pi):
            raise InvalidSpecError(
                "an angular gap of pi or more leaves the polygon unbounded"
            )
        gap = tau2 * float(np.tan(0.5 * deltas).sum() - np.pi)
    upper = math.exp(-0.5 * tau2)
    lower = upper * (1.0 - gap / (2.0 * math.pi))
    return PolygonReference(upper=upper, lower=lower, gap_area=gap)


@dataclass(frozen=True)
class HighDimSpec:
    """Random union of half-spaces: ``count`` uniform unit normals in
    ``dimension`` dimensions sharing one threshold, solved so that the union
    bound is 10**(-target_log10_union_bound)."""

    dimension: int
    count: int
    target_log10_union_bound: float
    seed: int

    def __post_init__(self):
        if self.dimension < 2:
            raise InvalidSpecError("dimension must be at least 2")
        if self.count < 1:
            raise InvalidSpecError("at least one half-space is required")
        if not math.isfinite(self.target_log10_union_bound):
            raise InvalidSpecError("the target exponent must be finite")


@dataclass(frozen=True)
class HighDimBuild:
    """A generated random problem plus the threshold bookkeeping.

    The target bound is rounded to two significant figures and the threshold
    re-solved against the rounded value; both the rounded and unrounded
    readings are retained so either convention can be checked.
    """

    problem: HalfSpaceProblem
    tau: float
    tau_unrounded: float
    union_bound: float
    union_bound_unrounded: float


def _solve_shared_threshold(count: int, bound: float) -> float:
    """tau with count * Phi(-tau) = bound, by bracketing on the log scale."""
    target = math.log(bound) - math.log(count)

    def excess(tau: float) -> float:
        return log_normal_cdf(-tau) - target

    return float(optimize.brentq(excess, -40.0, 40.0, xtol=1e-13))


def _round_two_significant(x: float) -> float:
    if x == 0.0:
        return 0.0
    exponent = math.floor(math.log10(abs(x)))
    scale = 10.0 ** (exponent - 1)
    return round(x / scale) * scale


def build_highdim(spec: HighDimSpec) -> HighDimBuild:
    """Generate the random problem and solve for its shared threshold."""
    rng = RandomStream(spec.seed).generator()
    raw = rng.standard_normal((spec.count, spec.dimension))
    omega = raw / np.linalg.norm(raw, axis=1)[:, None]
    bound_raw = 10.0 ** (-spec.target_log10_union_bound)
    tau_raw = _solve_shared_threshold(spec.count, bound_raw)
    bound_rounded = _round_two_significant(bound_raw)
    tau = _solve_shared_threshold(spec.count, bound_rounded)
    problem = HalfSpaceProblem(omega, np.full(spec.count, tau))
    return HighDimBuild(
        problem=problem,
        tau=tau,
        tau_unrounded=tau_raw,
        union_bound=problem.union_bound,
        union_bound_unrounded=bound_raw,
    )


def make_highdim(spec: HighDimSpec) -> HalfSpaceProblem:
    return build_highdim(spec).problem


def independent_reference(probabilities) -> float:
    """Union probability if the events were independent: 1 - prod(1 - P_j),
    accumulated in log1p space so that tiny P_j are not lost."""
    p = np.asarray(probabilities, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidSpecError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        log_none = np.log1p(-p).sum()
    return float(-np.expm1(log_none))


@dataclass(frozen=True)
class PolygonBenchmarkRow:
    """Aggregated replications for one polygon threshold."""

    tau: float
    mu_hat: float
    se: float
    mu_bar: float
    reference_lo: float
    reference_hi: float
    rel_mse: float
    estimates: np.ndarray  # per-replication mu_hat values

    @property
    def reference(self) -> float:
        """Value used for rel_mse: the upper bound once tau is large enough
        that the sandwich is negligible, the midpoint otherwise."""
        if self.tau >= UPPER_BOUND_EXACT_TAU:
            return self.reference_hi
        return 0.5 * (self.reference_lo + self.reference_hi)


def run_polygon_benchmark(
    taus,
    n: int,
    reps: int,
    seed: int,
    *,
    sides: int = 360,
    angle_set: str = "full",
    stream_base: int = 0,
    block_size: int = 1024,
    threads: int = 1,
) -> list[PolygonBenchmarkRow]:
    """Replicate the estimator over a grid of polygon thresholds.

    Each (threshold, replication) pair gets its own stream id, so rows are
    reproducible independently of the grid they are run in.
    """
    rows = []
    for ti, tau in enumerate(taus):
        spec = PolygonSpec(sides=sides, tau=float(tau), angle_set=angle_set)
        problem = make_polygon(spec)
        ref = polygon_reference(spec)
        mu_hats = np.empty(reps)
        for r in range(reps):
            stream = RandomStream(seed, stream_base + ti * reps + r)
            mu_hats[r] = estimate(
                problem, n, stream, block_size=block_size, threads=threads
            ).mu_hat
        reference = ref.upper if tau >= UPPER_BOUND_EXACT_TAU else ref.midpoint()
        rows.append(
            PolygonBenchmarkRow(
                tau=float(tau),
                mu_hat=float(mu_hats.mean()),
                se=float(mu_hats.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
                mu_bar=problem.union_bound,
                reference_lo=ref.lower,
                reference_hi=ref.upper,
                rel_mse=float(np.mean((mu_hats / reference - 1.0) ** 2)),
                estimates=mu_hats,
            )
        )
    return rows


@dataclass(frozen=True)
class HighDimCaseRow:
    """One generated high-dimensional case and its estimate."""

    name: str
    dimension: int
    count: int
    tau: float
    estimate: AloeEstimate

    @property
    def bound_ratio(self) -> float:
        return self.estimate.mu_hat / self.estimate.union_bound


def run_highdim_family(
    cases: int,
    n: int,
    seed: int,
    *,
    dimensions=(20, 50),
    target_range=(4.0, 8.0),
    stream_base: int = 0,
    block_size: int = 1024,
    threads: int = 1,
) -> list[HighDimCaseRow]:
    """Sample random case specs (dimension from ``dimensions``, count from
    {d/2, d, 2d}, log10 union bound uniform in ``target_range``) and
    estimate each.  With nearly orthogonal normals the events are almost
    independent, so estimates should hug the union bound."""
    meta_rng = RandomStream(seed, stream_base).generator()
    rows = []
    for c in range(cases):
        d = int(meta_rng.choice(np.asarray(dimensions)))
        count = int(d * meta_rng.choice(np.array([0.5, 1.0, 2.0])))
        target = float(meta_rng.uniform(*target_range))
        build = build_highdim(
            HighDimSpec(
                dimension=d,
                count=count,
                target_log10_union_bound=target,
                seed=seed + 7919 * (c + 1),
            )
        )
        est = estimate(
            build.problem,
            n,
            RandomStream(seed, stream_base + c + 1),
            block_size=block_size,
            threads=threads,
        )
        rows.append(
            HighDimCaseRow(
                name=f"highdim-d{d}-J{count}-{c}",
                dimension=d,
                count=count,
                tau=build.tau,
                estimate=est,
            )
        )
    return rows


def load_polygon_spec(path) -> PolygonSpec:
    data = _load_json_object(path)
    try:
        return PolygonSpec(
            sides=int(data["sides"]),
            tau=float(data["tau"]),
            angle_set=str(data.get("angle_set", "full")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad polygon spec {path}: {exc}") from exc


def load_highdim_spec(path) -> HighDimSpec:
    data = _load_json_object(path)
    try:
        return HighDimSpec(
            dimension=int(data["dimension"]),
            count=int(data["count"]),
            target_log10_union_bound=float(data["target_log10_union_bound"]),
            seed=int(data["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad high-dimensional spec {path}: {exc}") from exc


def _load_json_object(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpecError(f"cannot read spec file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidSpecError(f"spec file {path} must hold a JSON object")
    return data
