"""Matplotlib renderers for the CLI report paths.

Everything here draws to files with the Agg backend so reports work on
headless boxes.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

log = logging.getLogger(__name__)


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    log.info("wrote %s", path)
    return path


def activation_curves_png(curves: dict, path) -> Path:
    """Plot validation MSE per epoch for each activation.

    curves maps activation name to a list of per-seed curves (one value
    per epoch). The line is the across-seed median, the band the min/max
    envelope.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for name in sorted(curves):
        runs = np.asarray(curves[name], dtype=float)
        if runs.ndim == 1:
            runs = runs[None, :]
        epochs = np.arange(1, runs.shape[1] + 1)
        ax.plot(epochs, np.median(runs, axis=0), label=name, linewidth=1.6)
        if runs.shape[0] > 1:
            ax.fill_between(epochs, runs.min(axis=0), runs.max(axis=0),
                            alpha=0.15)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation MSE")
    ax.set_title("Held-out reconstruction error by activation")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def feedback_curve_png(points, path) -> Path:
    """Plot average list score against feedback iteration.

    points is a list of (iteration, average, count) rows, iteration
    ascending.
    """
    iterations = [p[0] for p in points]
    averages = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(iterations, averages, marker="o")
    ax.set_xlabel("feedback iteration")
    ax.set_ylabel("average list score")
    ax.set_ylim(0, 10.5)
    ax.set_title("Recommendation list quality over time")
    ax.grid(True, alpha=0.3)
    if iterations:
        ax.set_xticks(iterations)
    return _finish(fig, path)


def evaluation_bars_png(rows, path) -> Path:
    """Bar chart of MSE/RMSE per method; rows are (name, mse, rmse)."""
    names = [r[0] for r in rows]
    x = np.arange(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(x - width / 2, [r[1] for r in rows], width, label="MSE")
    ax.bar(x + width / 2, [r[2] for r in rows], width, label="RMSE")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=15, ha="right")
    ax.set_title("Prediction error by method")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    return _finish(fig, path)
