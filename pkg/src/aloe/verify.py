"""Self-contained invariant battery behind the ``verify`` CLI subcommand.

Each check re-derives one of the properties the estimator's guarantees rest
on -- almost-sure range, unbiasedness, the variance identity, the
product-moment bound, whitening consistency, sampler distributions, and the
grid constraint equivalence -- using moderate sample sizes so the whole
battery runs in seconds.  Checks are deterministic for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import (
    estimate,
    lemma_bound,
    nominal_monte_carlo,
    product_moment,
    theoretical_variance,
)
from .events import GeneralGaussianSpec, HalfSpaceProblem, whiten
from .gaussian import (
    normal_cdf,
    normal_quantile,
    sample_halfspace_conditional,
    sample_upper_truncated_normal,
    truncated_normal_cdf,
)
from .grid import (
    assemble_constraints,
    direct_feasibility,
    pseudo_inverse,
    build_laplacian,
    reduce_constraints,
    synthetic_three_bus,
)
from .streams import RandomStream

__all__ = ["Check", "run_verification"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _ks_statistic(cdf_values: np.ndarray) -> float:
    """KS distance of probability-integral-transformed draws from uniform."""
    u = np.sort(cdf_values)
    n = u.size
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - u), np.max(u - grid_lo)))


def _check_quantile_roundtrip() -> Check:
    worst = 0.0
    for p in (1e-300, 1e-100, 1e-30, 1e-10, 0.5):
        worst = max(worst, abs(normal_cdf(normal_quantile(p)) - p) / p)
    return Check(
        "quantile round trip",
        worst < 1e-10,
        f"max relative error {worst:.2e} over p down to 1e-300",
    )


def _check_truncated_tail_safety() -> Check:
    taus = np.linspace(-40.0, 38.0, 79)
    bad = 0
    for tau in taus:
        for u in (1e-15, 0.5, 1.0 - 1e-15):
            y = sample_upper_truncated_normal(float(tau), u)
            if not (math.isfinite(y) and y >= tau):
                bad += 1
    return Check(
        "truncated sampler tail safety",
        bad == 0,
        f"{bad} non-finite or out-of-range draws for tau up to 38",
    )


def _check_truncated_distribution(seed: int) -> Check:
    from .gaussian import _upper_truncated

    rng = RandomStream(seed, 101).generator()
    u = rng.random(100_000)
    critical = 1.949 / math.sqrt(u.size)  # level 0.001
    worst = 0.0
    for tau in (0.0, 1.0, 3.0, 6.0):
        y = _upper_truncated(np.full(u.size, tau), u)
        worst = max(worst, _ks_statistic(truncated_normal_cdf(tau, y)))
    return Check(
        "truncated sampler distribution",
        worst < critical,
        f"max KS statistic {worst:.4f} (level-0.001 critical {critical:.4f})",
    )


def _check_conditional_sampler(seed: int) -> Check:
    rng = RandomStream(seed, 102).generator()
    d = 5
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    ortho = rng.standard_normal(d)
    ortho -= direction * (ortho @ direction)
    ortho /= np.linalg.norm(ortho)
    n = 20_000
    critical = 1.949 / math.sqrt(n)
    worst = 0.0
    for tau in (0.0, 1.0, 3.0):
        x = sample_halfspace_conditional(direction, tau, rng, size=n)
        proj = x @ direction
        worst = max(worst, _ks_statistic(truncated_normal_cdf(tau, proj)))
        worst = max(worst, _ks_statistic(normal_cdf(x @ ortho)))
    return Check(
        "half-space conditional sampler",
        worst < critical,
        f"max KS statistic {worst:.4f} over projections (critical {critical:.4f})",
    )


def _check_hard_range(seed: int) -> Check:
    rng = RandomStream(seed, 103).generator()
    violations = 0
    for trial in range(20):
        d = int(rng.integers(2, 6))
        j_count = int(rng.integers(1, 8))
        omega = rng.standard_normal((j_count, d))
        omega /= np.linalg.norm(omega, axis=1)[:, None]
        tau = rng.uniform(0.0, 3.0, j_count)
        problem = HalfSpaceProblem(omega, tau)
        est = estimate(problem, 500, RandomStream(seed, 200 + trial))
        lo, hi = est.hard_range
        if not lo <= est.mu_hat <= hi:
            violations += 1
    return Check(
        "almost-sure estimate range",
        violations == 0,
        f"{violations} of 20 random problems escaped [union/J, union]",
    )


def _check_unbiasedness(seed: int) -> Check:
    problem = HalfSpaceProblem(np.eye(2), np.array([1.0, 1.0]))
    p = normal_cdf(-1.0)
    mu = 2 * p - p * p
    runs = 60
    n = 2_000
    estimates = np.array(
        [estimate(problem, n, RandomStream(seed, 300 + r)).mu_hat for r in range(runs)]
    )
    pooled_se = estimates.std(ddof=1) / math.sqrt(runs)
    gap = abs(estimates.mean() - mu)
    return Check(
        "estimator unbiasedness",
        gap <= 4 * pooled_se,
        f"|mean - closed form| = {gap:.3e} vs 4 se = {4 * pooled_se:.3e}",
    )


def _check_variance_identity(seed: int) -> Check:
    problem = HalfSpaceProblem(
        np.array([[1.0, 0.0], [0.0, 1.0], [math.sqrt(0.5), math.sqrt(0.5)]]),
        np.array([1.0, 1.0, 1.0]),
    )
    mc = nominal_monte_carlo(problem, 400_000, RandomStream(seed, 400))
    predicted = theoretical_variance(mc.t_hat[1:], problem.union_bound)
    est = estimate(problem, 200_000, RandomStream(seed, 401))
    values_var = (
        est.s_histogram[1:]
        @ (problem.union_bound / np.arange(1, 4) - est.mu_hat) ** 2
    ) / (est.n - 1)
    rel = abs(values_var - predicted) / predicted
    return Check(
        "variance identity",
        rel < 0.05,
        f"empirical vs predicted one-sample variance differ by {rel:.1%}",
    )


def _check_lemma_bound(seed: int) -> Check:
    rng = RandomStream(seed, 500).generator()
    worst_margin = -math.inf
    ok = True
    for j_count in (2, 5, 10):
        bound = lemma_bound(j_count)
        for _ in range(2_000):
            t = rng.dirichlet(np.full(j_count, rng.uniform(0.1, 2.0)))
            margin = product_moment(t) - bound
            worst_margin = max(worst_margin, margin)
            ok = ok and margin <= 1e-12
        two_point = np.zeros(j_count)
        two_point[0] = two_point[-1] = 0.5
        ok = ok and abs(product_moment(two_point) - bound) <= 1e-12
    return Check(
        "product-moment bound",
        ok,
        f"worst excess over the closed-form bound {worst_margin:.2e}",
    )


def _check_whitening(seed: int) -> Check:
    rng = RandomStream(seed, 600).generator()
    d = 3
    raw = rng.standard_normal((d, d))
    sigma = raw @ raw.T + 0.5 * np.eye(d)
    eta = rng.standard_normal(d)
    gamma = rng.standard_normal((4, d))
    kappa = gamma @ eta + rng.uniform(0.5, 2.0, 4) * np.sqrt(
        np.einsum("ij,jk,ik->i", gamma, sigma, gamma)
    )
    spec = GeneralGaussianSpec(eta=eta, sigma=sigma, gamma=gamma, kappa=kappa)
    problem = whiten(spec)
    n = 50_000
    y = eta + rng.standard_normal((n, d)) @ np.linalg.cholesky(sigma).T
    agree = True
    for j in range(4):
        direct = float(np.mean(y @ gamma[j] >= kappa[j]))
        analytic = normal_cdf(-problem.tau[j])
        se = math.sqrt(max(analytic * (1 - analytic), 1e-12) / n)
        agree = agree and abs(direct - analytic) <= 4 * se + 1e-12
    return Check(
        "whitening consistency",
        agree,
        "plain-MC raw-space probabilities match Phi(-tau) within 4 se",
    )


def _check_grid(seed: int) -> Check:
    case = synthetic_three_bus()
    cs = assemble_constraints(case)
    lap = build_laplacian(case)
    bplus = pseudo_inverse(lap)
    penrose = max(
        float(np.abs(lap @ bplus @ lap - lap).max()),
        float(np.abs(bplus @ lap @ bplus - bplus).max()),
    )
    rng = RandomStream(seed, 700).generator()
    p_r = case.eta_random + rng.standard_normal((1_000, 1)) * 0.8
    matrix_ok = (cs.gamma @ p_r.T <= cs.kappa[:, None] + 1e-9).all(axis=0)
    direct_ok = direct_feasibility(case, p_r)
    agree = bool(np.all(matrix_ok == direct_ok))
    reduce_constraints(cs, case)  # must not raise on a feasible case
    return Check(
        "grid constraint equivalence",
        agree and penrose < 1e-8,
        f"matrix vs direct check agree on 1000 draws; Penrose residual {penrose:.1e}",
    )


def run_verification(seed: int) -> list[Check]:
    """Run every check; all should pass for a healthy installation."""
    return [
        _check_quantile_roundtrip(),
        _check_truncated_tail_safety(),
        _check_truncated_distribution(seed),
        _check_conditional_sampler(seed),
        _check_hard_range(seed),
        _check_unbiasedness(seed),
        _check_variance_identity(seed),
        _check_lemma_bound(seed),
        _check_whitening(seed),
        _check_grid(seed),
    ]
