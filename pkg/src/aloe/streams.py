"""Reproducible parallel random streams and weighted discrete sampling.

Streams are keyed by ``(seed, stream_id)`` on top of a counter-based Philox
generator, so the same key always reproduces the same draw sequence and
distinct keys are statistically independent.  Substreams for sample blocks
are derived from the same key without consuming any state, which keeps
estimates independent of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidWeightsError

__all__ = ["RandomStream", "DiscreteSampler", "discrete_draw"]


@dataclass(frozen=True)
class RandomStream:
    """Key for a reproducible random stream.

    ``seed`` selects the experiment; ``stream_id`` selects an independent
    substream within it (one per replication, worker, or test case).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; repeated calls restart the sequence."""
        key = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(key))

    def block_generator(self, block_index: int) -> np.random.Generator:
        """Generator for one sample block, independent across block indices.

        Block substreams are derived by key, not by jumping, so block ``k``
        produces the same draws no matter which worker runs it.
        """
        key = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, block_index))
        return np.random.Generator(np.random.Philox(key))


class DiscreteSampler:
    """Draw indices with probability proportional to fixed nonnegative weights.

    Uses precomputed cumulative weights with binary search: O(log J) per
    draw, which is negligible next to the O(Jd) cost of counting events at
    each sample point.  Zero-weight indices are never returned.
    """

    def __init__(self, weights) -> None:
        w = np.ascontiguousarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InvalidWeightsError("weights must be a nonempty 1-d array")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise InvalidWeightsError("weights must be finite and nonnegative")
        total = float(w.sum())
        if total <= 0.0:
            raise InvalidWeightsError("total weight must be positive")
        self.weights = w
        self.total = total
        self._cumulative = np.cumsum(w)

    def __len__(self) -> int:
        return self.weights.size

    def lookup(self, u) -> np.ndarray:
        """Map uniforms in [0, 1) to indices via the cumulative table."""
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self._cumulative, u * self.total, side="right")
        # u*total can round up onto the last cumulative value; step back past
        # any zero-weight tail so those indices are never produced.
        idx = np.minimum(idx, self.weights.size - 1)
        while np.any(self.weights[idx] == 0.0):
            idx = np.where(self.weights[idx] == 0.0, idx - 1, idx)
        return idx

    def draw(self, rng: np.random.Generator) -> int:
        """One index with probability weight/total."""
        return int(self.lookup(rng.random()))

    def draw_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent indices in one vectorized call."""
        return self.lookup(rng.random(size))


def discrete_draw(sampler: DiscreteSampler, stream: RandomStream) -> int:
    """Single weighted draw from a fresh stream (index with probability w_j/total)."""
    return sampler.draw(stream.generator())
