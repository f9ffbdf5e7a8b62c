"""Small statistical helpers shared across test modules."""

import numpy as np


def ks_statistic(cdf_values) -> float:
    """KS distance of probability-integral-transformed draws from uniform."""
    u = np.sort(np.asarray(cdf_values, dtype=float))
    n = u.size
    return float(
        max(
            np.max(np.arange(1, n + 1) / n - u),
            np.max(u - np.arange(0, n) / n),
        )
    )


def ks_critical(n: int, level: float = 0.001) -> float:
    """Asymptotic KS critical value c(level)/sqrt(n)."""
    coefficients = {0.05: 1.358, 0.01: 1.628, 0.001: 1.949}
    return coefficients[level] / np.sqrt(n)
