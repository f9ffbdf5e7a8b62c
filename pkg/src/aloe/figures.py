"""Report figures rendered next to the delimited output.

All functions write a PNG to the given path and return that path.
matplotlib is imported lazily with the non-interactive Agg backend so
figure-free runs never touch it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["s_histogram_figure", "replication_histogram", "bound_ratio_figure"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def s_histogram_figure(s_histogram: np.ndarray, path, title: str = "") -> Path:
    """Bar chart of how many events held per draw (S = 1, 2, ...)."""
    plt = _pyplot()
    counts = np.asarray(s_histogram)
    present = np.nonzero(counts)[0]
    hi = int(present.max()) if present.size else 1
    values = np.arange(1, hi + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(values, counts[1 : hi + 1], color="#32648e", width=0.8)
    ax.set_xlabel("events holding at the draw (S)")
    ax.set_ylabel("draws")
    if hi >= 2 and counts[1] > 50 * counts[2 : hi + 1].max():
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    if hi <= 20:
        ax.set_xticks(values)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def replication_histogram(ratios_by_label: dict[str, np.ndarray], path) -> Path:
    """Histograms of estimate/reference across replications, one panel per
    label (one per polygon threshold)."""
    plt = _pyplot()
    n_panels = len(ratios_by_label)
    cols = min(n_panels, 4)
    rows = (n_panels + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False)
    for ax, (label, ratios) in zip(axes.flat, ratios_by_label.items()):
        ax.hist(np.asarray(ratios), bins=20, color="#32648e")
        ax.axvline(1.0, color="#d95f02", lw=1)
        ax.set_title(label, fontsize=10)
        ax.set_xlabel("estimate / reference", fontsize=8)
        ax.tick_params(labelsize=8)
    for ax in axes.flat[n_panels:]:
        ax.set_visible(False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def bound_ratio_figure(labels: list[str], ratios: np.ndarray, path) -> Path:
    """Estimate over union bound per case, for families where the bound is
    essentially sharp."""
    plt = _pyplot()
    ratios = np.asarray(ratios)
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * len(labels)), 4))
    ax.plot(np.arange(len(labels)), ratios, "o", color="#32648e")
    ax.axhline(1.0, color="#d95f02", lw=1)
    ax.set_ylabel("estimate / union bound")
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(min(0.97, float(ratios.min()) - 0.005), 1.005)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
