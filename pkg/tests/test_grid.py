import json
import math
from pathlib import Path

import numpy as np
import pytest

from aloe.errors import (
    DisconnectedNetworkError,
    EmptyMixtureError,
    InfeasibleConstraintError,
    InvalidSpecError,
)
from aloe.estimator import estimate
from aloe.gaussian import normal_cdf
from aloe.grid import (
    Bus,
    GridCase,
    Line,
    assemble_constraints,
    build_incidence,
    build_laplacian,
    direct_feasibility,
    grid_case_to_dict,
    load_grid_case,
    pseudo_inverse,
    reduce_constraints,
    save_grid_case,
    synthetic_ten_bus,
    synthetic_three_bus,
    to_halfspace_problem,
)
from aloe.streams import RandomStream

SEED = 90210

FIXTURES = Path(__file__).parent / "fixtures"


def chain_case(theta_bar=0.4):
    """Three busses in a chain (two lines), matching the smallest layout."""
    return GridCase(
        busses=(
            Bus(id=1, role="random", p_min=-2.0, p_max=2.0, eta=0.1),
            Bus(id=2, role="fixed", eta=-0.2),
            Bus(id=3, role="slack", p_min=-2.0, p_max=2.0),
        ),
        lines=(Line(from_bus=1, to_bus=2, b=1.0), Line(from_bus=2, to_bus=3, b=1.0)),
        sigma=np.array([[0.01]]),
        theta_bar=theta_bar,
    )


def random_tree_case(rng, n=10):
    busses = [Bus(id=1, role="slack", p_min=-5.0, p_max=5.0)]
    lines = []
    for i in range(2, n + 1):
        role = "random" if i % 2 == 0 else "fixed"
        busses.append(Bus(id=i, role=role, p_min=-5.0, p_max=5.0, eta=0.05 * i))
        lines.append(Line(from_bus=int(rng.integers(1, i)), to_bus=i, b=float(rng.uniform(0.5, 3.0))))
    n_random = sum(b.role == "random" for b in busses)
    return GridCase(
        busses=tuple(busses),
        lines=tuple(lines),
        sigma=0.02 * np.eye(n_random),
        theta_bar=1.0,
    )


class TestLaplacian:
    def test_two_bus_single_line(self):
        case = GridCase(
            busses=(
                Bus(id=1, role="random", p_min=-1, p_max=1, eta=0.0),
                Bus(id=2, role="slack", p_min=-1, p_max=1),
            ),
            lines=(Line(from_bus=1, to_bus=2, b=1.0),),
            sigma=np.array([[0.1]]),
            theta_bar=0.5,
        )
        assert np.array_equal(build_laplacian(case), [[1.0, -1.0], [-1.0, 1.0]])

    def test_triangle_unit_susceptances(self):
        case = synthetic_three_bus()
        unit = GridCase(
            busses=case.busses,
            lines=tuple(Line(l.from_bus, l.to_bus, 1.0) for l in case.lines),
            sigma=case.sigma,
            theta_bar=case.theta_bar,
        )
        lap = build_laplacian(unit)
        assert np.array_equal(np.diag(lap), [2.0, 2.0, 2.0])
        assert np.array_equal(lap - np.diag(np.diag(lap)), -np.ones((3, 3)) + np.eye(3))

    def test_null_vector_and_spectrum(self):
        case = random_tree_case(RandomStream(SEED, 0).generator())
        lap = build_laplacian(case)
        assert np.allclose(lap @ np.ones(10), 0.0, atol=1e-12)
        eigvals = np.linalg.eigvalsh(lap)
        assert abs(eigvals[0]) < 1e-12
        assert eigvals[1] > 1e-8  # connected: zero eigenvalue is simple

    def test_parallel_lines_accumulate(self):
        case = GridCase(
            busses=(
                Bus(id=1, role="random", p_min=-1, p_max=1, eta=0.0),
                Bus(id=2, role="slack", p_min=-1, p_max=1),
            ),
            lines=(Line(1, 2, 1.0), Line(1, 2, 2.5)),
            sigma=np.array([[0.1]]),
            theta_bar=0.5,
        )
        assert build_laplacian(case)[0, 1] == -3.5


class TestPseudoInverse:
    def test_hand_oracle_two_bus(self):
        # eigenvalues 0 and 2 with eigenvector (1,-1)/sqrt(2)
        b = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert np.allclose(
            pseudo_inverse(b), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-14
        )

    def test_null_space_preserved(self):
        case = synthetic_ten_bus()
        bplus = pseudo_inverse(build_laplacian(case))
        assert np.allclose(bplus @ np.ones(10), 0.0, atol=1e-10)

    def test_penrose_identities(self):
        case = random_tree_case(RandomStream(SEED, 1).generator())
        lap = build_laplacian(case)
        bplus = pseudo_inverse(lap)
        scale = np.abs(lap).max()
        assert np.abs(lap @ bplus @ lap - lap).max() < 1e-8 * scale
        assert np.abs(bplus @ lap @ bplus - bplus).max() < 1e-8


class TestIncidence:
    def test_single_line(self):
        case = GridCase(
            busses=(
                Bus(id=1, role="random", p_min=-1, p_max=1, eta=0.0),
                Bus(id=2, role="slack", p_min=-1, p_max=1),
            ),
            lines=(Line(from_bus=1, to_bus=2, b=1.0),),
            sigma=np.array([[0.1]]),
            theta_bar=0.5,
        )
        assert np.array_equal(build_incidence(case), [[1.0, -1.0]])

    def test_rows_sum_to_zero_and_unweighted_laplacian(self):
        case = synthetic_three_bus()
        inc = build_incidence(case)
        assert np.allclose(inc.sum(axis=1), 0.0)
        unweighted = inc.T @ inc
        expected = 2 * np.eye(3) - (np.ones((3, 3)) - np.eye(3))
        assert np.array_equal(unweighted, expected)

    def test_weighted_reconstruction(self):
        case = synthetic_ten_bus()
        inc = build_incidence(case)
        weights = np.array([l.b for l in case.lines])
        rebuilt = inc.T @ np.diag(weights) @ inc
        assert np.abs(rebuilt - build_laplacian(case)).max() < 1e-10


class TestAssembly:
    def test_row_count_formula_chain(self):
        cs = assemble_constraints(chain_case())
        assert cs.gamma.shape == (2 * 1 + 2 + 2 * 2, 1)
        assert len(cs.row_labels) == 8

    def test_row_count_formula_ten_bus(self):
        case = synthetic_ten_bus()
        cs = assemble_constraints(case)
        assert cs.gamma.shape[0] == 2 * 4 + 2 + 2 * 12

    def test_block_structure_labels(self):
        labels = assemble_constraints(chain_case()).row_labels
        assert labels == (
            "bus-upper:1",
            "bus-lower:1",
            "slack-lower:3",
            "slack-upper:3",
            "phase-forward:1-2",
            "phase-forward:2-3",
            "phase-backward:1-2",
            "phase-backward:2-3",
        )

    def test_mean_point_is_feasible(self):
        for case in (synthetic_three_bus(), synthetic_ten_bus()):
            cs = assemble_constraints(case)
            eta = case.eta_random
            assert np.all(cs.gamma @ eta <= cs.kappa + 1e-12)
            assert direct_feasibility(case, eta[None, :])[0]

    def test_raising_phase_limit_loosens_phase_rows(self):
        tight = assemble_constraints(chain_case(theta_bar=0.3))
        loose = assemble_constraints(chain_case(theta_bar=0.5))
        phase = [i for i, lab in enumerate(tight.row_labels) if lab.startswith("phase")]
        assert np.all(loose.kappa[phase] >= tight.kappa[phase])
        other = [i for i, lab in enumerate(tight.row_labels) if not lab.startswith("phase")]
        assert np.array_equal(loose.kappa[other], tight.kappa[other])

    def test_unbounded_bus_rows_dropped(self):
        case = chain_case()
        unbounded = GridCase(
            busses=(
                Bus(id=1, role="random", eta=0.1),  # no box bounds at all
                Bus(id=2, role="fixed", eta=-0.2),
                Bus(id=3, role="slack", p_min=-2.0, p_max=2.0),
            ),
            lines=case.lines,
            sigma=case.sigma,
            theta_bar=case.theta_bar,
        )
        cs = assemble_constraints(unbounded)
        assert len(cs.row_labels) == 6
        assert not any(lab.startswith("bus-") for lab in cs.row_labels)


class TestEquivalence:
    @pytest.mark.parametrize("factory", [synthetic_three_bus, synthetic_ten_bus])
    def test_matrix_and_direct_checks_agree(self, factory):
        case = factory()
        cs = assemble_constraints(case)
        rng = RandomStream(SEED, 2).generator()
        d = case.sigma.shape[0]
        scale = 3.0 * np.sqrt(np.diag(case.sigma))
        draws = case.eta_random + rng.standard_normal((1000, d)) * scale
        matrix_ok = (cs.gamma @ draws.T <= cs.kappa[:, None] + 1e-9).all(axis=0)
        assert np.array_equal(matrix_ok, direct_feasibility(case, draws))

    def test_total_injection_is_zero(self):
        case = synthetic_ten_bus()
        rng = RandomStream(SEED, 3).generator()
        draws = case.eta_random + rng.standard_normal((200, 4)) @ np.linalg.cholesky(case.sigma).T
        eta_f = case.eta_fixed
        for p_r in draws:
            p_s = -p_r.sum() - eta_f.sum()
            assert abs(p_r.sum() + eta_f.sum() + p_s) < 1e-10

    def test_slack_injection_law(self):
        case = synthetic_ten_bus()
        rng = RandomStream(SEED, 4).generator()
        n = 200_000
        draws = case.eta_random + rng.standard_normal((n, 4)) @ np.linalg.cholesky(case.sigma).T
        p_s = -draws.sum(axis=1) - case.eta_fixed.sum()
        mean_expected = -case.eta_random.sum() - case.eta_fixed.sum()
        var_expected = float(np.ones(4) @ case.sigma @ np.ones(4))
        assert abs(p_s.mean() - mean_expected) < 4 * math.sqrt(var_expected / n)
        assert p_s.var() == pytest.approx(var_expected, rel=0.05)


class TestReduction:
    def test_identity_covariance_thresholds(self):
        case = chain_case()
        unit = GridCase(
            busses=case.busses, lines=case.lines, sigma=np.eye(1), theta_bar=0.4
        )
        cs = assemble_constraints(unit)
        problem = to_halfspace_problem(cs, unit)
        eta = unit.eta_random
        norms = np.linalg.norm(cs.gamma, axis=1)
        expected = (cs.kappa - cs.gamma @ eta) / norms
        kept = expected <= 38.0
        assert np.allclose(np.sort(problem.tau), np.sort(expected[kept]), atol=1e-10)

    def test_extreme_rows_dropped(self):
        case = synthetic_three_bus()  # the box rows sit far beyond 38 sigmas
        reduction = reduce_constraints(assemble_constraints(case), case)
        assert len(reduction.dropped_labels) > 0
        assert np.all(reduction.problem.tau <= 38.0)
        assert reduction.dropped_probability <= 1e-300

    def test_all_rows_dropped_is_empty_mixture(self):
        case = synthetic_three_bus(sigma_scale=1e-8)
        with pytest.raises(EmptyMixtureError):
            reduce_constraints(assemble_constraints(case), case)

    def test_deterministic_row_dropped_when_satisfied(self):
        sigma = np.array([[0.01, 0.0], [0.0, 0.0]])  # second bus never fluctuates
        case = GridCase(
            busses=(
                Bus(id=1, role="random", p_min=-2.0, p_max=2.0, eta=0.0),
                Bus(id=2, role="random", p_min=-2.0, p_max=2.0, eta=0.5),
                Bus(id=3, role="slack", p_min=-5.0, p_max=5.0),
            ),
            lines=(Line(1, 3, 1.0), Line(2, 3, 1.0)),
            sigma=sigma,
            theta_bar=2.0,
        )
        reduction = reduce_constraints(assemble_constraints(case), case)
        assert any("bus-upper:2" == lab for lab in reduction.deterministic_labels)

    def test_deterministic_violation_is_infeasible(self):
        sigma = np.array([[0.01, 0.0], [0.0, 0.0]])
        case = GridCase(
            busses=(
                Bus(id=1, role="random", p_min=-2.0, p_max=2.0, eta=0.0),
                Bus(id=2, role="random", p_min=-2.0, p_max=0.4, eta=0.5),
                Bus(id=3, role="slack", p_min=-5.0, p_max=5.0),
            ),
            lines=(Line(1, 3, 1.0), Line(2, 3, 1.0)),
            sigma=sigma,
            theta_bar=2.0,
        )
        with pytest.raises(InfeasibleConstraintError):
            reduce_constraints(assemble_constraints(case), case)

    def test_estimate_matches_frozen_plain_mc_fixture(self):
        oracles = json.loads((FIXTURES / "grid_oracles.json").read_text())
        for name, factory in (
            ("three_bus", synthetic_three_bus),
            ("ten_bus", synthetic_ten_bus),
        ):
            case = factory()
            problem = to_halfspace_problem(assemble_constraints(case), case)
            est = estimate(problem, 100_000, RandomStream(SEED, 5))
            oracle = oracles[name]
            combined = math.sqrt(est.se**2 + oracle["se_mc"] ** 2)
            assert abs(est.mu_hat - oracle["mu_mc"]) < 4 * combined


class TestCaseValidation:
    def test_two_slack_busses_rejected(self):
        with pytest.raises(InvalidSpecError):
            GridCase(
                busses=(
                    Bus(id=1, role="slack", p_min=-1, p_max=1),
                    Bus(id=2, role="slack", p_min=-1, p_max=1),
                    Bus(id=3, role="random", p_min=-1, p_max=1),
                ),
                lines=(Line(1, 2, 1.0), Line(2, 3, 1.0)),
                sigma=np.array([[0.1]]),
                theta_bar=0.5,
            )

    def test_disconnected_network_rejected(self):
        with pytest.raises(DisconnectedNetworkError):
            GridCase(
                busses=(
                    Bus(id=1, role="slack", p_min=-1, p_max=1),
                    Bus(id=2, role="random", p_min=-1, p_max=1),
                    Bus(id=3, role="random", p_min=-1, p_max=1),
                    Bus(id=4, role="fixed"),
                ),
                lines=(Line(1, 2, 1.0), Line(3, 4, 1.0)),
                sigma=np.array([[0.1, 0.0], [0.0, 0.1]]),
                theta_bar=0.5,
            )

    def test_sigma_shape_must_match_random_busses(self):
        with pytest.raises(InvalidSpecError):
            GridCase(
                busses=(
                    Bus(id=1, role="slack", p_min=-1, p_max=1),
                    Bus(id=2, role="random", p_min=-1, p_max=1),
                ),
                lines=(Line(1, 2, 1.0),),
                sigma=np.eye(2),
                theta_bar=0.5,
            )

    def test_case_file_round_trip(self, tmp_path):
        case = synthetic_ten_bus()
        path = tmp_path / "case.json"
        save_grid_case(case, path)
        loaded = load_grid_case(path)
        assert grid_case_to_dict(loaded) == grid_case_to_dict(case)

    def test_null_bounds_mean_unbounded(self, tmp_path):
        path = tmp_path / "case.json"
        data = grid_case_to_dict(chain_case())
        data["busses"][0]["p_min"] = None
        data["busses"][0]["p_max"] = None
        path.write_text(json.dumps(data))
        loaded = load_grid_case(path)
        bus = [b for b in loaded.busses if b.id == 1][0]
        assert bus.p_min == -math.inf and bus.p_max == math.inf
