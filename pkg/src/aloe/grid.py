"""DC power-flow constraint assembly and reduction to half-space form.

A grid case lists busses (fixed, random, or the single slack), lines with
positive susceptances, the covariance of the random injections, and a phase
limit.  Under the DC approximation the phases solve B theta = p for the
weighted graph Laplacian B, and feasibility is a conjunction of linear
constraints on the random injections p_R:

* box constraints on each random bus,
* two constraints on the slack bus, whose injection balances the system
  (total injection is zero: losses are ignored),
* forward and backward phase-difference constraints on every line, via the
  Laplacian pseudo-inverse.

Stacking them gives gamma_j . p_R <= kappa_j; each *violation*
gamma_j . p_R > kappa_j is a half-space event for the Gaussian injections,
standardized through the usual whitening.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DisconnectedNetworkError,
    EmptyMixtureError,
    InfeasibleConstraintError,
    InvalidSpecError,
)
from .events import GeneralGaussianSpec, HalfSpaceProblem, whiten_rows
from .gaussian import normal_cdf

__all__ = [
    "Bus",
    "Line",
    "GridCase",
    "ConstraintSystem",
    "GridReduction",
    "build_laplacian",
    "pseudo_inverse",
    "build_incidence",
    "assemble_constraints",
    "reduce_constraints",
    "to_halfspace_problem",
    "direct_feasibility",
    "load_grid_case",
    "save_grid_case",
    "grid_case_to_dict",
    "synthetic_three_bus",
    "synthetic_ten_bus",
]

logger = logging.getLogger(__name__)

ROLES = ("fixed", "random", "slack")

# Whitened thresholds above this are dropped from the problem: their
# probabilities are far below double precision and the corresponding events
# can never be sampled.
DEFAULT_DROP_THRESHOLD = 38.0


@dataclass(frozen=True)
class Bus:
    """One bus: its role, injection bounds, and mean injection.

    ``p_min``/``p_max`` of +-infinity (or None in case files) mean the bound
    is absent and its constraint row is simply not generated.  The slack
    bus's mean is implied by total-power balance, so its ``eta`` is ignored.
    """

    id: int
    role: str
    p_min: float = -math.inf
    p_max: float = math.inf
    eta: float = 0.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidSpecError(f"bus {self.id}: unknown role {self.role!r}")
        if not self.p_min <= self.p_max:
            raise InvalidSpecError(f"bus {self.id}: p_min exceeds p_max")
        if self.p_min == math.inf or self.p_max == -math.inf:
            raise InvalidSpecError(f"bus {self.id}: bounds leave no feasible injection")


@dataclass(frozen=True)
class Line:
    """Transmission line between two busses with susceptance b > 0."""

    from_bus: int
    to_bus: int
    b: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise InvalidSpecError("a line cannot connect a bus to itself")
        if not (self.b > 0.0 and math.isfinite(self.b)):
            raise InvalidSpecError("line susceptance must be positive and finite")


@dataclass(frozen=True)
class GridCase:
    """A complete synthetic grid description.

    Busses are ordered by ascending id everywhere (Laplacian rows, the
    random-injection vector, covariance).  Exactly one slack bus is
    required, the line graph must be connected, and ``sigma`` must be a
    symmetric PSD matrix over the random busses.
    """

    busses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    sigma: np.ndarray
    theta_bar: float

    def __post_init__(self):
        busses = tuple(sorted(self.busses, key=lambda b: b.id))
        object.__setattr__(self, "busses", busses)
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(
            self, "sigma", np.ascontiguousarray(self.sigma, dtype=float)
        )
        ids = [b.id for b in busses]
        if len(set(ids)) != len(ids):
            raise InvalidSpecError("bus ids must be unique")
        if sum(b.role == "slack" for b in busses) != 1:
            raise InvalidSpecError("exactly one slack bus is required")
        known = set(ids)
        for line in self.lines:
            if line.from_bus not in known or line.to_bus not in known:
                raise InvalidSpecError(
                    f"line {line.from_bus}-{line.to_bus} references an unknown bus"
                )
        if not _connected(ids, self.lines):
            raise DisconnectedNetworkError("the line graph is not connected")
        n_random = sum(b.role == "random" for b in busses)
        if self.sigma.shape != (n_random, n_random):
            raise InvalidSpecError(
                f"sigma must be {n_random}x{n_random} over the random busses"
            )
        scale = float(np.abs(self.sigma).max()) if n_random else 0.0
        if scale > 0 and float(np.abs(self.sigma - self.sigma.T).max()) > 1e-10 * scale:
            raise InvalidSpecError("sigma must be symmetric")
        if n_random == 0:
            raise InvalidSpecError("at least one random bus is required")
        if not (self.theta_bar > 0.0 and math.isfinite(self.theta_bar)):
            raise InvalidSpecError("theta_bar must be positive and finite")

    # --- bus bookkeeping (ascending-id order throughout) ---

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.busses]

    def _role_positions(self, role: str) -> list[int]:
        return [i for i, b in enumerate(self.busses) if b.role == role]

    @property
    def random_positions(self) -> list[int]:
        return self._role_positions("random")

    @property
    def fixed_positions(self) -> list[int]:
        return self._role_positions("fixed")

    @property
    def slack_position(self) -> int:
        return self._role_positions("slack")[0]

    @property
    def eta_random(self) -> np.ndarray:
        return np.array([self.busses[i].eta for i in self.random_positions])

    @property
    def eta_fixed(self) -> np.ndarray:
        return np.array([self.busses[i].eta for i in self.fixed_positions])

    @property
    def slack_bus(self) -> Bus:
        return self.busses[self.slack_position]


def _connected(ids, lines) -> bool:
    if not ids:
        return False
    adjacency: dict[int, set[int]] = {i: set() for i in ids}
    for line in lines:
        adjacency[line.from_bus].add(line.to_bus)
        adjacency[line.to_bus].add(line.from_bus)
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        node = frontier.pop()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                frontier.append(other)
    return len(seen) == len(ids)


def build_laplacian(case: GridCase) -> np.ndarray:
    """Weighted graph Laplacian: off-diagonal -b summed over parallel lines,
    diagonal the negated row sum, so B @ 1 = 0 and B is PSD with a single
    zero eigenvalue for a connected grid."""
    index = {bus_id: i for i, bus_id in enumerate(case.ids)}
    n = len(case.busses)
    lap = np.zeros((n, n))
    for line in case.lines:
        i, j = index[line.from_bus], index[line.to_bus]
        lap[i, j] -= line.b
        lap[j, i] -= line.b
    np.fill_diagonal(lap, -lap.sum(axis=1))
    return lap


def pseudo_inverse(matrix: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric matrix by
    eigendecomposition: eigenvalues above n * eps * lambda_max are inverted,
    the rest zeroed (for a connected Laplacian that is exactly the
    all-ones direction)."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_max = float(np.abs(eigvals).max())
    if lam_max == 0.0:
        return np.zeros_like(sym)
    cutoff = sym.shape[0] * np.finfo(float).eps * lam_max
    keep = np.abs(eigvals) > cutoff
    inverted = np.divide(1.0, eigvals, out=np.zeros_like(eigvals), where=keep)
    return (eigvecs * inverted) @ eigvecs.T


def build_incidence(case: GridCase) -> np.ndarray:
    """Edge-node incidence: row per line with +1 at the from-bus and -1 at
    the to-bus, in the case's line order."""
    index = {bus_id: i for i, bus_id in enumerate(case.ids)}
    inc = np.zeros((len(case.lines), len(case.busses)))
    for m, line in enumerate(case.lines):
        inc[m, index[line.from_bus]] = 1.0
        inc[m, index[line.to_bus]] = -1.0
    return inc


@dataclass(frozen=True)
class ConstraintSystem:
    """Stacked feasibility constraints gamma @ p_R <= kappa on the random
    injections, with a provenance label per row.

    With all bounds finite the blocks are, in order: random-bus upper and
    lower boxes (I and -I), the two slack rows (+1^T and -1^T), then the
    forward and backward phase rows -- 2*N_R + 2 + 2*M rows total.  Rows
    whose bound is infinite are dropped at assembly.
    """

    gamma: np.ndarray
    kappa: np.ndarray
    row_labels: tuple[str, ...]

    def __post_init__(self):
        if self.gamma.shape[0] != self.kappa.size or len(self.row_labels) != self.kappa.size:
            raise InvalidSpecError("gamma, kappa, and row labels must align")


def assemble_constraints(case: GridCase) -> ConstraintSystem:
    """Build (gamma, kappa) for the case.

    Phase constraints eliminate the dependent injections: with
    p_F = eta_F fixed and p_S = -1.p_R - 1.eta_F, the line phase differences
    are D B^+ p, and |D theta| <= theta_bar becomes

        +- D (Bp_R - Bp_S 1_R^T) p_R <= theta_bar -+ D (Bp_F - Bp_S 1_F^T) eta_F

    where Bp_R, Bp_F, Bp_S are the column blocks of the pseudo-inverse for
    random, fixed, and slack busses.  The slack box bounds translate to
    -1.p_R <= p_max_S + 1.eta_F and 1.p_R <= -p_min_S - 1.eta_F.
    """
    random_pos = case.random_positions
    fixed_pos = case.fixed_positions
    slack_pos = case.slack_position
    n_random = len(random_pos)

    laplacian = build_laplacian(case)
    bplus = pseudo_inverse(laplacian)
    incidence = build_incidence(case)

    bp_random = bplus[:, random_pos]
    bp_fixed = bplus[:, fixed_pos]
    bp_slack = bplus[:, [slack_pos]]

    eta_fixed = case.eta_fixed
    fixed_total = float(eta_fixed.sum())
    ones_r = np.ones((1, n_random))
    ones_f = np.ones((1, len(fixed_pos)))

    phase_gamma = incidence @ (bp_random - bp_slack @ ones_r)
    phase_shift = (incidence @ (bp_fixed - bp_slack @ ones_f)) @ eta_fixed

    rows: list[np.ndarray] = []
    bounds: list[float] = []
    labels: list[str] = []

    def add(row: np.ndarray, bound: float, label: str) -> None:
        if bound == math.inf:
            return  # absent bound: no constraint row
        rows.append(row)
        bounds.append(bound)
        labels.append(label)

    eye = np.eye(n_random)
    for k, pos in enumerate(random_pos):
        bus = case.busses[pos]
        add(eye[k], bus.p_max, f"bus-upper:{bus.id}")
    for k, pos in enumerate(random_pos):
        bus = case.busses[pos]
        add(-eye[k], -bus.p_min, f"bus-lower:{bus.id}")

    slack = case.slack_bus
    add(np.ones(n_random), -slack.p_min - fixed_total, f"slack-lower:{slack.id}")
    add(-np.ones(n_random), slack.p_max + fixed_total, f"slack-upper:{slack.id}")

    for m, line in enumerate(case.lines):
        add(
            phase_gamma[m],
            case.theta_bar - phase_shift[m],
            f"phase-forward:{line.from_bus}-{line.to_bus}",
        )
    for m, line in enumerate(case.lines):
        add(
            -phase_gamma[m],
            case.theta_bar + phase_shift[m],
            f"phase-backward:{line.from_bus}-{line.to_bus}",
        )

    return ConstraintSystem(
        gamma=np.array(rows), kappa=np.array(bounds), row_labels=tuple(labels)
    )


@dataclass(frozen=True)
class GridReduction:
    """Whitened violation events plus bookkeeping on what was dropped.

    ``dropped_probability`` totals the probabilities of rows removed for
    exceeding the threshold cutoff; adding it back to an estimate and to the
    union bound gives a mildly conservative correction for the ignored
    events.
    """

    problem: HalfSpaceProblem
    kept_labels: tuple[str, ...]
    dropped_labels: tuple[str, ...]
    deterministic_labels: tuple[str, ...]
    dropped_probability: float


def reduce_constraints(
    cs: ConstraintSystem,
    case: GridCase,
    drop_threshold: float = DEFAULT_DROP_THRESHOLD,
) -> GridReduction:
    """Whiten violation events gamma . p_R > kappa for Gaussian injections.

    Zero-variance rows cannot fluctuate: one violated at the mean makes the
    case infeasible outright (raised), otherwise the row is certain to hold
    and is dropped.  Whitened rows with tau above ``drop_threshold`` are
    dropped with their (at most ~1e-300) probabilities totalled for the
    conservative correction.
    """
    sigma = case.sigma
    eta = case.eta_random
    eigvals = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    lam_max = float(eigvals[-1])
    if lam_max <= 0.0:
        raise InvalidSpecError("sigma must have at least one positive eigenvalue")

    variances = np.einsum("ij,jk,ik->i", cs.gamma, sigma, cs.gamma)
    gamma_scale = np.einsum("ij,ij->i", cs.gamma, cs.gamma)
    cutoff = sigma.shape[0] * np.finfo(float).eps * lam_max
    deterministic = variances <= cutoff * gamma_scale

    det_labels = []
    for j in np.nonzero(deterministic)[0]:
        slack = cs.kappa[j] - float(cs.gamma[j] @ eta)
        if slack < -1e-9 * max(1.0, abs(cs.kappa[j])):
            raise InfeasibleConstraintError(
                f"deterministic constraint {cs.row_labels[j]!r} is violated at the "
                f"mean injection by {-slack:.3g}"
            )
        det_labels.append(cs.row_labels[j])
    if det_labels:
        logger.info(
            "dropped %d deterministic constraint rows that hold at the mean",
            len(det_labels),
        )

    stochastic = np.nonzero(~deterministic)[0]
    if stochastic.size == 0:
        raise InvalidSpecError("no stochastic constraint rows remain")
    spec = GeneralGaussianSpec(
        eta=eta,
        sigma=sigma,
        gamma=cs.gamma[stochastic],
        kappa=cs.kappa[stochastic],
    )
    omega, tau = whiten_rows(spec)

    keep = tau <= drop_threshold
    dropped_idx = stochastic[~keep]
    dropped_probability = float(normal_cdf(-tau[~keep]).sum())
    if dropped_idx.size:
        logger.info(
            "dropped %d rows with standardized threshold above %g "
            "(total probability %.3g)",
            dropped_idx.size,
            drop_threshold,
            dropped_probability,
        )
    if not np.any(keep):
        raise EmptyMixtureError(
            f"every constraint row exceeds the drop threshold {drop_threshold}; "
            "the violation probability is 0 to double precision"
        )
    problem = HalfSpaceProblem(omega[keep], tau[keep])
    return GridReduction(
        problem=problem,
        kept_labels=tuple(cs.row_labels[j] for j in stochastic[keep]),
        dropped_labels=tuple(cs.row_labels[j] for j in dropped_idx),
        deterministic_labels=tuple(det_labels),
        dropped_probability=dropped_probability,
    )


def to_halfspace_problem(
    cs: ConstraintSystem,
    case: GridCase,
    drop_threshold: float = DEFAULT_DROP_THRESHOLD,
) -> HalfSpaceProblem:
    """The whitened violation events of a constraint system."""
    return reduce_constraints(cs, case, drop_threshold).problem


def direct_feasibility(case: GridCase, p_random: np.ndarray) -> np.ndarray:
    """Physical feasibility check, bypassing the constraint matrices.

    For each row of ``p_random``: complete the injection vector with the
    fixed means and the balancing slack injection, solve the phases through
    the pseudo-inverse, and test every line's phase gap and the slack/random
    boxes directly.  Serves as an oracle for the assembled constraints.
    """
    p_random = np.atleast_2d(np.asarray(p_random, dtype=float))
    laplacian = build_laplacian(case)
    bplus = pseudo_inverse(laplacian)
    incidence = build_incidence(case)
    n = len(case.busses)
    eta_fixed = case.eta_fixed
    fixed_total = float(eta_fixed.sum())
    slack = case.slack_bus

    feasible = np.empty(p_random.shape[0], dtype=bool)
    for i, p_r in enumerate(p_random):
        p = np.zeros(n)
        p[case.random_positions] = p_r
        p[case.fixed_positions] = eta_fixed
        p[case.slack_position] = -p_r.sum() - fixed_total
        theta = bplus @ p
        gaps = incidence @ theta
        ok = bool(np.all(np.abs(gaps) <= case.theta_bar))
        ok = ok and slack.p_min <= p[case.slack_position] <= slack.p_max
        for k, pos in enumerate(case.random_positions):
            bus = case.busses[pos]
            ok = ok and bus.p_min <= p_r[k] <= bus.p_max
        feasible[i] = ok
    return feasible


# --- case files ---


def _lower_from_json(value) -> float:
    return -math.inf if value is None else float(value)


def _upper_from_json(value) -> float:
    return math.inf if value is None else float(value)


def load_grid_case(path) -> GridCase:
    """Read a grid case file:

    {"busses": [{"id", "role", "p_min", "p_max", "eta"}, ...],
     "lines": [{"from", "to", "b"}, ...],
     "sigma": [[...]], "theta_bar": num}

    ``p_min``/``p_max`` may be null for an absent bound; ``eta`` defaults
    to 0 and is ignored for the slack bus.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpecError(f"cannot read grid case {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidSpecError("grid case file must hold a JSON object")
    try:
        busses = tuple(
            Bus(
                id=int(b["id"]),
                role=str(b["role"]),
                p_min=_lower_from_json(b.get("p_min")),
                p_max=_upper_from_json(b.get("p_max")),
                eta=float(b.get("eta", 0.0)),
            )
            for b in data["busses"]
        )
        lines = tuple(
            Line(from_bus=int(l["from"]), to_bus=int(l["to"]), b=float(l["b"]))
            for l in data["lines"]
        )
        sigma = np.asarray(data["sigma"], dtype=float)
        theta_bar = float(data["theta_bar"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad grid case {path}: {exc}") from exc
    return GridCase(busses=busses, lines=lines, sigma=sigma, theta_bar=theta_bar)


def grid_case_to_dict(case: GridCase) -> dict:
    def bound(x: float):
        return None if math.isinf(x) else x

    return {
        "busses": [
            {
                "id": b.id,
                "role": b.role,
                "p_min": bound(b.p_min),
                "p_max": bound(b.p_max),
                "eta": b.eta,
            }
            for b in case.busses
        ],
        "lines": [
            {"from": l.from_bus, "to": l.to_bus, "b": l.b} for l in case.lines
        ],
        "sigma": case.sigma.tolist(),
        "theta_bar": case.theta_bar,
    }


def save_grid_case(case: GridCase, path) -> None:
    Path(path).write_text(json.dumps(grid_case_to_dict(case), indent=2))


# --- built-in synthetic cases (used by tests and the verification battery) ---


def synthetic_three_bus(theta_bar: float = 0.35, sigma_scale: float = 1.0) -> GridCase:
    """Three busses (one random, one fixed, one slack) in a triangle.

    The default injection variance puts the union bound of violations at
    1e-3: rare, but still verifiable by plain Monte Carlo.  The weakest
    phase constraint dominates the bound.
    """
    return GridCase(
        busses=(
            Bus(id=1, role="random", p_min=-4.0, p_max=4.0, eta=0.6),
            Bus(id=2, role="fixed", p_min=-2.0, p_max=2.0, eta=-0.4),
            Bus(id=3, role="slack", p_min=-3.0, p_max=3.0),
        ),
        lines=(
            Line(from_bus=1, to_bus=2, b=2.0),
            Line(from_bus=2, to_bus=3, b=1.5),
            Line(from_bus=1, to_bus=3, b=1.0),
        ),
        sigma=np.array([[0.0081263]]) * sigma_scale,
        theta_bar=theta_bar,
    )


def synthetic_ten_bus(theta_bar: float = 0.40, sigma_scale: float = 1.0) -> GridCase:
    """Ten busses on a ring with two chords; four correlated random busses.

    Default variances put the union bound of violations near 4e-4, spread
    over the phase constraints of several lines.
    """
    correlation = np.array(
        [
            [1.00, 0.30, 0.10, 0.00],
            [0.30, 1.00, 0.25, 0.05],
            [0.10, 0.25, 1.00, 0.20],
            [0.00, 0.05, 0.20, 1.00],
        ]
    )
    scales = np.array([0.1414, 0.1061, 0.1768, 0.1273])
    sigma = (correlation * np.outer(scales, scales)) * sigma_scale
    ring = [(i, i % 10 + 1) for i in range(1, 11)]
    chords = [(1, 5), (3, 8)]
    return GridCase(
        busses=(
            Bus(id=1, role="random", p_min=-3.0, p_max=3.0, eta=0.5),
            Bus(id=2, role="fixed", eta=-0.3),
            Bus(id=3, role="random", p_min=-3.0, p_max=3.0, eta=-0.2),
            Bus(id=4, role="fixed", eta=0.25),
            Bus(id=5, role="slack", p_min=-4.0, p_max=4.0),
            Bus(id=6, role="random", p_min=-3.0, p_max=3.0, eta=0.4),
            Bus(id=7, role="fixed", eta=-0.35),
            Bus(id=8, role="random", p_min=-3.0, p_max=3.0, eta=-0.15),
            Bus(id=9, role="fixed", eta=0.2),
            Bus(id=10, role="fixed", eta=-0.1),
        ),
        lines=tuple(
            Line(from_bus=a, to_bus=b, b=w)
            for (a, b), w in zip(
                ring + chords, [2.0, 1.8, 2.2, 1.6, 2.0, 1.9, 2.1, 1.7, 2.3, 1.5, 1.2, 1.4]
            )
        ),
        sigma=sigma,
        theta_bar=theta_bar,
    )
