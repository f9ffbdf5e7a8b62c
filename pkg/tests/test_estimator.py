import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aloe.errors import (
    EmptyMixtureError,
    InvalidDistributionError,
    InvalidWeightsError,
)
from aloe.estimator import (
    MixtureWeights,
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
from aloe.events import HalfSpaceProblem
from aloe.gaussian import normal_cdf
from aloe.streams import RandomStream

SEED = 424242

PHI2 = normal_cdf(-2.0)
ORTHO_PROBLEM = HalfSpaceProblem(np.eye(2), np.array([2.0, 2.0]))
ORTHO_MU = 2 * PHI2 - PHI2 * PHI2  # inclusion-exclusion for independent events


def three_halfspace_problem():
    return HalfSpaceProblem(
        np.array([[1.0, 0.0], [0.0, 1.0], [math.sqrt(0.5), math.sqrt(0.5)]]),
        np.array([1.0, 1.0, 1.0]),
    )


class TestEstimate:
    def test_single_event_is_exact(self):
        problem = HalfSpaceProblem(np.array([[1.0, 0.0]]), np.array([2.0]))
        est = estimate(problem, 37, RandomStream(SEED, 0))
        assert est.mu_hat == PHI2
        assert est.se == 0.0
        assert not est.degenerate

    def test_duplicated_event_is_exact(self):
        problem = HalfSpaceProblem(
            np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([1.0, 1.0])
        )
        est = estimate(problem, 200, RandomStream(SEED, 1))
        assert est.mu_hat == normal_cdf(-1.0)
        assert est.se == 0.0
        assert est.union_bound == pytest.approx(2 * normal_cdf(-1.0), rel=1e-15)

    def test_two_orthogonal_halfspaces_within_four_se(self):
        est = estimate(ORTHO_PROBLEM, 100_000, RandomStream(SEED, 2))
        assert abs(est.mu_hat - ORTHO_MU) < 4 * est.se

    def test_hard_range_always_contains_estimate(self):
        for r in range(30):
            est = estimate(ORTHO_PROBLEM, 100, RandomStream(SEED, 100 + r))
            lo, hi = est.hard_range
            assert lo <= est.mu_hat <= hi

    def test_histogram_totals_and_support(self):
        est = estimate(ORTHO_PROBLEM, 5_000, RandomStream(SEED, 3))
        assert est.s_histogram.sum() == 5_000
        assert est.s_histogram[0] == 0

    def test_bound_fields(self):
        est = estimate(ORTHO_PROBLEM, 10_000, RandomStream(SEED, 4))
        n, j = est.n, est.n_events
        assert est.var_bound_theorem == pytest.approx(
            est.mu_hat * (est.union_bound - est.mu_hat) / n
        )
        assert est.var_bound_lemma == pytest.approx(
            est.mu_hat**2 * (j + 1 / j - 2) / (4 * n)
        )
        assert est.cv_bound == pytest.approx(
            min(
                math.sqrt(est.union_bound / est.lower_bound - 1),
                math.sqrt(j - 1),
            )
            / math.sqrt(n)
        )

    def test_empirical_cv_within_planning_bound(self):
        runs = np.array(
            [
                estimate(ORTHO_PROBLEM, 2_000, RandomStream(SEED, 200 + r)).mu_hat
                for r in range(100)
            ]
        )
        cv = runs.std(ddof=1) / runs.mean()
        bound = estimate(ORTHO_PROBLEM, 2_000, RandomStream(SEED, 200)).cv_bound
        assert cv <= 1.2 * bound

    def test_variance_bound_on_closed_form_problem(self):
        n = 2_000
        runs = np.array(
            [
                estimate(ORTHO_PROBLEM, n, RandomStream(SEED, 300 + r)).mu_hat
                for r in range(200)
            ]
        )
        pooled_var = runs.var(ddof=1)
        assert pooled_var <= 1.2 * ORTHO_MU * (ORTHO_PROBLEM.union_bound - ORTHO_MU) / n

    def test_empty_mixture_raises(self):
        problem = HalfSpaceProblem(np.eye(2), np.array([45.0, 50.0]))
        with pytest.raises(EmptyMixtureError):
            estimate(problem, 10, RandomStream(SEED, 5))

    def test_underflowed_event_dropped_from_mixture(self):
        mixed = HalfSpaceProblem(
            np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2.0, 45.0])
        )
        est = estimate(mixed, 5_000, RandomStream(SEED, 6))
        assert est.union_bound == PHI2
        assert est.mu_hat == PHI2  # the dead event can never fire

    def test_n_validation(self):
        with pytest.raises(ValueError):
            estimate(ORTHO_PROBLEM, 0, RandomStream(SEED, 7))

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_hard_range_property_random_problems(self, j_count, case):
        rng = RandomStream(9090, case).generator()
        omega = rng.standard_normal((j_count, 3))
        omega /= np.linalg.norm(omega, axis=1)[:, None]
        problem = HalfSpaceProblem(omega, rng.uniform(0.0, 3.0, j_count))
        est = estimate(problem, 64, RandomStream(9091, case))
        lo, hi = est.hard_range
        assert lo <= est.mu_hat <= hi


class TestSubEvent:
    def test_indicator_of_union_reproduces_estimate(self):
        est = estimate(ORTHO_PROBLEM, 20_000, RandomStream(SEED, 8))
        sub = estimate_subevent(ORTHO_PROBLEM, lambda x: 1.0, 20_000, RandomStream(SEED, 8))
        assert sub.nu_hat == pytest.approx(est.mu_hat, rel=1e-12)

    def test_zero_function(self):
        sub = estimate_subevent(ORTHO_PROBLEM, lambda x: 0.0, 1_000, RandomStream(SEED, 9))
        assert sub.nu_hat == 0.0
        assert sub.se == 0.0

    def test_single_halfspace_subevent_matches_closed_form(self):
        def f(x):
            return float(x[0] >= 2.0)

        sub = estimate_subevent(ORTHO_PROBLEM, f, 100_000, RandomStream(SEED, 10))
        assert abs(sub.nu_hat - PHI2) < 4 * sub.se


class TestGeneralMixture:
    def test_proportional_weights_collapse_to_inverse_counts(self):
        probs = ORTHO_PROBLEM.event_probabilities
        weights = MixtureWeights(probs / probs.sum())
        res = estimate_general_mixture(
            ORTHO_PROBLEM, weights, 2_000, RandomStream(SEED, 11), keep_values=True
        )
        est = estimate(ORTHO_PROBLEM, 2_000, RandomStream(SEED, 11))
        assert res.mu_hat == pytest.approx(est.mu_hat, rel=1e-12)
        expected = {
            ORTHO_PROBLEM.union_bound,
            ORTHO_PROBLEM.union_bound / 2,
        }
        for v in np.unique(res.values):
            assert min(abs(v - e) / e for e in expected) < 1e-12

    def test_single_event_unit_weight_exact(self):
        problem = HalfSpaceProblem(np.array([[1.0, 0.0]]), np.array([2.0]))
        res = estimate_general_mixture(problem, np.array([1.0]), 100, RandomStream(SEED, 12))
        assert res.mu_hat == pytest.approx(PHI2, rel=1e-15)

    def test_skewed_weights_still_unbiased(self):
        res = estimate_general_mixture(
            ORTHO_PROBLEM, np.array([0.9, 0.1]), 100_000, RandomStream(SEED, 13)
        )
        assert abs(res.mu_hat - ORTHO_MU) < 4 * res.se
        balanced = estimate(ORTHO_PROBLEM, 100_000, RandomStream(SEED, 13))
        assert res.se > balanced.se  # lopsided weights cost variance

    def test_invalid_weights_rejected(self):
        with pytest.raises(InvalidWeightsError):
            estimate_general_mixture(
                ORTHO_PROBLEM, np.array([0.7, 0.7]), 10, RandomStream(SEED, 14)
            )
        with pytest.raises(InvalidWeightsError):
            estimate_general_mixture(
                ORTHO_PROBLEM, np.array([-0.5, 1.5]), 10, RandomStream(SEED, 14)
            )
        dead = HalfSpaceProblem(np.eye(2), np.array([2.0, 45.0]))
        with pytest.raises(InvalidWeightsError):
            estimate_general_mixture(
                dead, np.array([0.5, 0.5]), 10, RandomStream(SEED, 14)
            )


class TestTheoreticalVariance:
    def test_no_overlap_limit_is_zero(self):
        mu = 0.03
        t = np.array([mu, 0.0, 0.0])
        assert theoretical_variance(t, mu_bar=mu) == 0.0

    def test_two_point_equality_case(self):
        mu, j_count = 0.01, 6
        t = np.zeros(j_count)
        t[0] = t[-1] = mu / 2
        mu_bar = mu / 2 * (1 + j_count)
        expected = mu * mu * (j_count + 1 / j_count - 2) / 4
        assert theoretical_variance(t, mu_bar) == pytest.approx(expected, rel=1e-12)

    def test_brute_force_against_estimator_spread(self):
        problem = three_halfspace_problem()
        t_hat = nominal_monte_carlo(problem, 10_000_000, RandomStream(SEED, 15)).t_hat
        predicted = theoretical_variance(t_hat[1:], problem.union_bound)
        est = estimate(problem, 1_000_000, RandomStream(SEED, 16))
        s = np.arange(1, 4, dtype=float)
        values_var = float(
            est.s_histogram[1:] @ (problem.union_bound / s - est.mu_hat) ** 2
        ) / (est.n - 1)
        assert values_var == pytest.approx(predicted, rel=0.01)

    def test_invalid_distributions_rejected(self):
        with pytest.raises(InvalidDistributionError):
            theoretical_variance(np.array([-0.1, 0.2]), 1.0)
        with pytest.raises(InvalidDistributionError):
            theoretical_variance(np.array([0.9, 0.3]), 1.0)


class TestMomentIdentity:
    def test_first_moment_is_unbiasedness(self):
        problem = three_halfspace_problem()
        t_hat = nominal_monte_carlo(problem, 2_000_000, RandomStream(SEED, 17)).t_hat
        check = moment_identity_check(problem, 1, 200_000, RandomStream(SEED, 18), t_hat)
        # k=1: both sides estimate mu
        assert check.predicted == pytest.approx(float(t_hat[1:].sum()), rel=1e-12)
        assert abs(check.empirical - check.predicted) < 5 * check.empirical_se

    def test_second_moment_single_event(self):
        problem = HalfSpaceProblem(np.array([[1.0, 0.0]]), np.array([2.0]))
        t_exact = np.array([0.0, PHI2])
        check = moment_identity_check(problem, 2, 100, RandomStream(SEED, 19), t_exact)
        assert check.empirical == pytest.approx(PHI2 * PHI2, rel=1e-12)
        assert check.predicted == pytest.approx(PHI2 * PHI2, rel=1e-12)

    @pytest.mark.parametrize("k", [2, 3])
    def test_higher_moments_match_within_combined_error(self, k):
        problem = HalfSpaceProblem(np.eye(2), np.array([1.0, 1.0]))
        m = 2_000_000
        mc = nominal_monte_carlo(problem, m, RandomStream(SEED, 20))
        check = moment_identity_check(problem, k, 500_000, RandomStream(SEED, 21), mc.t_hat)
        s = np.arange(1, 3, dtype=float)
        a = (problem.union_bound / s) ** (k - 1)
        t_pos = mc.t_hat[1:]
        pred_var = float(t_pos @ a**2 - (t_pos @ a) ** 2) / m
        combined = math.sqrt(check.empirical_se**2 + pred_var)
        assert abs(check.empirical - check.predicted) < 4 * combined


class TestLemmaBound:
    def test_single_event_bound(self):
        assert lemma_bound(1) == 1.0
        t = np.array([1.0])
        assert product_moment(t) == 1.0

    def test_closed_form_value(self):
        assert lemma_bound(4) == pytest.approx(1.5625, abs=1e-15)

    def test_two_point_law_attains_bound(self):
        for j_count in (2, 5, 10, 50):
            t = np.zeros(j_count)
            t[0] = t[-1] = 0.5
            assert product_moment(t) == pytest.approx(lemma_bound(j_count), abs=1e-12)

    def test_random_distributions_respect_bound(self):
        rng = RandomStream(SEED, 22).generator()
        j_count = 10
        bound = lemma_bound(j_count)
        worst = 0.0
        for _ in range(10_000):
            t = rng.dirichlet(np.full(j_count, rng.uniform(0.05, 3.0)))
            worst = max(worst, product_moment(t))
            assert satisfies_lemma_bound(t)
        assert worst <= bound + 1e-12
        assert bound == pytest.approx(3.025)

    def test_interval_generalization(self):
        rng = RandomStream(SEED, 23).generator()
        for _ in range(2_000):
            a = rng.uniform(0.1, 5.0)
            b = a + rng.uniform(0.0, 10.0)
            support = rng.uniform(a, b, size=8)
            weights = rng.dirichlet(np.ones(8))
            ex = float(weights @ support)
            einv = float(weights @ (1.0 / support))
            assert ex * einv <= interval_product_bound(a, b) + 1e-12

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            lemma_bound(0)
        with pytest.raises(ValueError):
            interval_product_bound(0.0, 1.0)
        with pytest.raises(ValueError):
            interval_product_bound(2.0, 1.0)


class TestNominalMonteCarlo:
    def test_matches_closed_form(self):
        mc = nominal_monte_carlo(ORTHO_PROBLEM, 4_000_000, RandomStream(SEED, 24))
        assert abs(mc.mu_hat - ORTHO_MU) < 4 * mc.se
        assert mc.t_hat.sum() == pytest.approx(1.0)

    def test_agrees_with_mixture_estimator(self):
        problem = three_halfspace_problem()
        mc = nominal_monte_carlo(problem, 2_000_000, RandomStream(SEED, 25))
        est = estimate(problem, 500_000, RandomStream(SEED, 26))
        combined = math.sqrt(mc.se**2 + est.se**2)
        assert abs(mc.mu_hat - est.mu_hat) < 4 * combined
