"""Event systems: the abstract union-of-events interface and its Gaussian
half-space realization, including whitening of general Gaussian problems.

An event system exposes exactly what the mixture estimator needs: the
per-event probabilities, a conditional sampler for each event, and a counter
for how many events hold at a point.  The half-space system specializes this
to H_j = {x : omega_j . x >= tau_j} under N(0, I), where P_j = Phi(-tau_j)
is available in closed form.
"""

from __future__ import annotations

import abc
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConstraintError,
    InvalidSpecError,
    NearSingularCovarianceError,
    UnsampleableEventError,
)
from .gaussian import _halfspace_block, normal_cdf

__all__ = [
    "EventSystem",
    "HalfSpaceProblem",
    "GeneralGaussianSpec",
    "whiten",
    "whiten_rows",
    "event_count",
    "conditional_draw",
    "load_problem",
    "save_problem",
]

logger = logging.getLogger(__name__)

# Normals further than this from unit length are rejected; anything closer is
# silently renormalized to machine precision.
_UNIT_NORM_TOL = 1e-6

# A constraint whose variance ratio against the covariance's top eigenvalue
# falls below this carries essentially no randomness.
_NEAR_SINGULAR_RATIO = 1e-12


class EventSystem(abc.ABC):
    """A finite family of events with conditional sampling.

    Requirements on implementations:

    * ``event_probabilities`` returns P_1..P_J >= 0.  Events whose
      probability underflowed to exactly 0 stay in the list (so indices are
      stable) but are never sampled and contribute nothing to the union
      bound.
    * ``draw_conditional(j, rng)`` returns a point distributed as the base
      law conditioned on event j; the drawn point always satisfies event j,
      so its event count is at least 1.
    * ``count_events(x)`` returns S(x), the number of events holding at x.
    """

    @property
    @abc.abstractmethod
    def event_probabilities(self) -> np.ndarray: ...

    @abc.abstractmethod
    def draw_conditional(self, j: int, rng: np.random.Generator): ...

    @abc.abstractmethod
    def count_events(self, x) -> int: ...

    def event_indicators(self, x) -> np.ndarray:
        """Boolean vector of which events hold at x (default: unavailable)."""
        raise NotImplementedError

    def draw_conditional_block(
        self, js: np.ndarray, rng: np.random.Generator, chunk: int = 1024
    ) -> tuple[np.ndarray, np.ndarray]:
        """Draw one point per entry of ``js``; returns (points, counts).

        The default loops over ``draw_conditional``; implementations with a
        vectorized path should override.
        """
        xs = [self.draw_conditional(int(j), rng) for j in js]
        counts = np.array([self.count_events(x) for x in xs], dtype=np.int64)
        return np.asarray(xs), counts

    @property
    def n_events(self) -> int:
        return int(np.asarray(self.event_probabilities).size)

    @property
    def union_bound(self) -> float:
        """Sum of event probabilities (upper bounds the union probability)."""
        return float(np.asarray(self.event_probabilities).sum())

    @property
    def lower_bound(self) -> float:
        """Largest single event probability (lower bounds the union probability)."""
        return float(np.asarray(self.event_probabilities).max())


class HalfSpaceProblem(EventSystem):
    """Union of Gaussian half-space events H_j = {x : omega_j . x >= tau_j}.

    ``omega`` is a (J, d) array of unit normals, ``tau`` the matching
    thresholds.  Boundary points (omega.x equal to tau) count as inside.
    Immutable after construction and safe to share across streams.
    """

    def __init__(self, omega, tau) -> None:
        omega = np.ascontiguousarray(omega, dtype=float)
        tau = np.ascontiguousarray(tau, dtype=float)
        if omega.ndim == 1:
            omega = omega[None, :]
        if omega.ndim != 2 or tau.ndim != 1 or omega.shape[0] != tau.shape[0]:
            raise InvalidSpecError("omega must be (J, d) with tau of length J")
        if omega.shape[0] == 0:
            raise InvalidSpecError("at least one half-space is required")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(tau))):
            raise InvalidSpecError("omega and tau must be finite")
        norms = np.linalg.norm(omega, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise InvalidSpecError(
                f"normal {worst} has norm {norms[worst]:.8g}; "
                f"normals must be unit length within {_UNIT_NORM_TOL}"
            )
        self.omega = omega / norms[:, None]
        self.omega.setflags(write=False)
        self.tau = tau
        self.tau.setflags(write=False)
        self._probabilities = normal_cdf(-self.tau)
        self._probabilities.setflags(write=False)
        n_dropped = int(np.sum(self._probabilities == 0.0))
        if n_dropped and self._probabilities.sum() > 0.0:
            logger.warning(
                "%d of %d events have probability underflowing to 0; "
                "they are excluded from the mixture and the union bound",
                n_dropped,
                tau.size,
            )

    @property
    def dimension(self) -> int:
        return self.omega.shape[1]

    @property
    def event_probabilities(self) -> np.ndarray:
        return self._probabilities

    def event_indicators(self, x) -> np.ndarray:
        return self.omega @ np.asarray(x, dtype=float) >= self.tau

    def indicator_matrix(self, points: np.ndarray) -> np.ndarray:
        """(m, J) boolean matrix of event memberships for a batch of points."""
        return points @ self.omega.T >= self.tau

    def count_events(self, x) -> int:
        return int(self.event_indicators(x).sum())

    def count_events_batch(self, points: np.ndarray, chunk: int = 1024) -> np.ndarray:
        """S(x) for each row of ``points`` via one dense product per chunk.

        Chunking only bounds the temporary indicator matrix; the counts are
        identical for any chunk size.
        """
        m = points.shape[0]
        counts = np.empty(m, dtype=np.int64)
        step = max(int(chunk), 1)
        for start in range(0, m, step):
            stop = min(start + step, m)
            counts[start:stop] = self.indicator_matrix(points[start:stop]).sum(axis=1)
        return counts

    def draw_conditional(self, j: int, rng: np.random.Generator) -> np.ndarray:
        if self._probabilities[j] == 0.0:
            raise UnsampleableEventError(
                f"event {j} has probability 0 and cannot be conditioned on"
            )
        return _halfspace_block(self.omega[j], float(self.tau[j]), rng, 1)[0]

    def draw_conditional_block(
        self, js: np.ndarray, rng: np.random.Generator, chunk: int = 1024
    ) -> tuple[np.ndarray, np.ndarray]:
        om = self.omega[js]
        x = _halfspace_block(om, self.tau[js], rng, js.size)
        counts = self.count_events_batch(x, chunk=chunk)
        # The conditioned event holds by construction; if rounding of the
        # recomputed inner product flipped its indicator at the boundary,
        # restore the count floor rather than divide by zero downstream.
        np.maximum(counts, 1, out=counts)
        return x, counts


@dataclass(frozen=True)
class GeneralGaussianSpec:
    """Half-space events gamma_j . y >= kappa_j for y ~ N(eta, sigma)."""

    eta: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.ascontiguousarray(self.eta, dtype=float))
        object.__setattr__(self, "sigma", np.ascontiguousarray(self.sigma, dtype=float))
        gamma = np.ascontiguousarray(self.gamma, dtype=float)
        if gamma.ndim == 1:
            gamma = gamma[None, :]
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "kappa", np.atleast_1d(np.asarray(self.kappa, dtype=float)))
        d = self.eta.size
        if self.sigma.shape != (d, d):
            raise InvalidSpecError("sigma must be square and match the mean dimension")
        if self.gamma.shape != (self.kappa.size, d):
            raise InvalidSpecError("gamma must be (J, d) with kappa of length J")
        scale = float(np.abs(self.sigma).max())
        if scale > 0 and float(np.abs(self.sigma - self.sigma.T).max()) > 1e-10 * scale:
            raise InvalidSpecError("sigma must be symmetric (within 1e-10 relative)")


def _symmetric_sqrt(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """PSD square root by eigendecomposition; negative eigenvalues are
    clipped to zero so rank-deficient covariances degrade gracefully.
    Returns (sqrt, largest eigenvalue)."""
    sym = 0.5 * (sigma + sigma.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_max = float(eigvals[-1])
    if lam_max <= 0.0:
        raise InvalidSpecError("covariance has no positive eigenvalue")
    if float(eigvals[0]) < -1e-10 * lam_max:
        raise InvalidSpecError(
            f"covariance has eigenvalue {eigvals[0]:.3e}, more negative than "
            f"rounding of the top eigenvalue {lam_max:.3e} allows"
        )
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return root, lam_max


def whiten_rows(spec: GeneralGaussianSpec) -> tuple[np.ndarray, np.ndarray]:
    """Whitened (omega, tau) rows of a general Gaussian problem, without
    constructing the problem object (callers may filter rows first)."""
    root, lam_max = _symmetric_sqrt(spec.sigma)
    w = spec.gamma @ root  # row j is sigma^(1/2) gamma_j
    variances = np.einsum("ij,ij->i", w, w)
    gamma_scale = np.einsum("ij,ij->i", spec.gamma, spec.gamma)
    for j in range(variances.size):
        if variances[j] <= 0.0:
            raise DegenerateConstraintError(
                f"constraint {j} has zero variance under the covariance"
            )
        if variances[j] < _NEAR_SINGULAR_RATIO * lam_max * gamma_scale[j]:
            raise NearSingularCovarianceError(
                f"constraint {j} carries a variance ratio below {_NEAR_SINGULAR_RATIO}; "
                "the covariance is numerically singular along its direction"
            )
    scale = np.sqrt(variances)
    omega = w / scale[:, None]
    tau = (spec.kappa - spec.gamma @ spec.eta) / scale
    return omega, tau


def whiten(spec: GeneralGaussianSpec) -> HalfSpaceProblem:
    """Standardize a general Gaussian problem to unit-normal half-space form.

    With y = eta + sigma^(1/2) x for x ~ N(0, I), the event
    gamma . y >= kappa becomes omega . x >= tau with

        omega = sigma^(1/2) gamma / sqrt(gamma . sigma gamma)
        tau   = (kappa - gamma . eta) / sqrt(gamma . sigma gamma)

    where sigma^(1/2) is the symmetric PSD square root (negative eigenvalues
    clipped to zero).  Changing the mean changes tau but never omega.
    Constraints whose direction carries no variance cannot be standardized:
    exactly zero variance raises DegenerateConstraintError, and a variance
    ratio below 1e-12 of the top eigenvalue raises
    NearSingularCovarianceError.
    """
    return HalfSpaceProblem(*whiten_rows(spec))


def event_count(problem: HalfSpaceProblem, x) -> int | np.ndarray:
    """Number of half-spaces containing x; batched when x is (m, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return problem.count_events_batch(x)
    return problem.count_events(x)


def conditional_draw(problem: HalfSpaceProblem, j: int, stream) -> tuple[np.ndarray, int]:
    """One draw conditioned on event j plus its event count (always >= 1)."""
    rng = stream.generator() if hasattr(stream, "generator") else stream
    x = problem.draw_conditional(j, rng)
    return x, max(problem.count_events(x), 1)


def problem_to_dict(problem: HalfSpaceProblem) -> dict:
    return {
        "d": problem.dimension,
        "omega": problem.omega.tolist(),
        "tau": problem.tau.tolist(),
    }


def save_problem(problem: HalfSpaceProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2))


def load_problem(path) -> HalfSpaceProblem:
    """Read a problem file: either whitened form {d, omega, tau} or raw
    Gaussian form {eta, sigma, gamma, kappa} (whitened on load)."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpecError(f"cannot read problem file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidSpecError("problem file must hold a JSON object")
    if "omega" in data:
        try:
            omega = np.asarray(data["omega"], dtype=float)
            tau = np.asarray(data["tau"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"bad whitened problem file: {exc}") from exc
        problem = HalfSpaceProblem(omega, tau)
        if "d" in data and int(data["d"]) != problem.dimension:
            raise InvalidSpecError(
                f"declared dimension {data['d']} != normals' dimension {problem.dimension}"
            )
        return problem
    if "gamma" in data:
        try:
            spec = GeneralGaussianSpec(
                eta=np.asarray(data["eta"], dtype=float),
                sigma=np.asarray(data["sigma"], dtype=float),
                gamma=np.asarray(data["gamma"], dtype=float),
                kappa=np.asarray(data["kappa"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"bad raw Gaussian problem file: {exc}") from exc
        return whiten(spec)
    raise InvalidSpecError(
        "problem file must contain either {d, omega, tau} or {eta, sigma, gamma, kappa}"
    )
