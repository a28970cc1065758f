"""Figures written next to the CSV reports."""

from __future__ import annotations

import contextlib
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


@contextlib.contextmanager
def _figure(width=4.5, height=3.2, **kwargs):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height), **kwargs)
        try:
            yield fig, ax
        finally:
            plt.close(fig)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    return path


def plot_similarity(matrix: np.ndarray, path, title: str = "") -> Path:
    with _figure(4.0, 3.4) as (fig, ax):
        im = ax.imshow(matrix, cmap="viridis", origin="upper")
        ax.set_xlabel("position j")
        ax.set_ylabel("position i")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="inner product")
        return _save(fig, path)


def plot_similarity_profile(matrices: dict[str, np.ndarray], path, row: int = 0) -> Path:
    """Row ``row`` of each similarity matrix against position, one line each."""
    with _figure() as (fig, ax):
        for label, m in matrices.items():
            ax.plot(np.arange(m.shape[1]), m[row], label=label, lw=1.2)
        ax.set_xlabel("position j")
        ax.set_ylabel(f"similarity to position {row}")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_training_curve(metrics: Sequence[tuple[int, float, float]], path) -> Path:
    epochs = [m[0] for m in metrics]
    with _figure() as (fig, ax):
        ax.plot(epochs, [m[1] for m in metrics], "o-", ms=3, color="C0", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss", color="C0")
        gaps = [m[2] for m in metrics]
        if any(np.isfinite(gaps)):
            ax2 = ax.twinx()
            ax2.plot(epochs, gaps, "s--", ms=3, color="C3")
            ax2.set_ylabel("val greedy gap (%)", color="C3")
            ax2.spines["top"].set_visible(False)
        return _save(fig, path)


def plot_gap_bars(labels: Sequence[str], gaps: Sequence[float], path, ylabel: str = "mean gap (%)") -> Path:
    with _figure(max(3.5, 0.7 * len(labels) + 1.5), 3.2) as (fig, ax):
        x = np.arange(len(labels))
        ax.bar(x, np.nan_to_num(np.asarray(gaps, dtype=float)), color="C0")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        return _save(fig, path)
