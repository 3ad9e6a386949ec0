"""Figures written alongside the CSV outputs.

Uses ``matplotlib.figure.Figure`` directly, so no GUI backend or pyplot
global state is involved.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _figure(width=7.0, height=4.0, rows=1, cols=1, **kw):
    fig = Figure(figsize=(width, height), constrained_layout=True)
    axes = fig.subplots(rows, cols, squeeze=False, **kw)
    return fig, axes


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with mpl.rc_context(RC):
        fig.savefig(path, dpi=120)
    return path


def plot_history(history, path, title: str | None = None):
    """Accuracy per epoch with generation boundaries and executed actions, LR below."""
    with mpl.rc_context(RC):
        fig, axes = _figure(7.0, 4.5, rows=2, sharex=True, gridspec_kw={"height_ratios": [3, 1]})
        ax, ax_lr = axes[0, 0], axes[1, 0]
        ep = [r.epoch for r in history.epochs]
        ax.plot(ep, [r.train_acc for r in history.epochs], lw=1.0, label="train")
        ax.plot(ep, [r.test_acc for r in history.epochs], lw=1.0, label="test")
        for r in history.epochs:
            if r.action:
                ax.axvline(r.epoch + 0.5, color="0.6", lw=0.6, ls="--")
                ax.annotate(r.action, (r.epoch + 0.5, 0.02), rotation=90, fontsize=6,
                            va="bottom", ha="right", color="0.35")
        ax.set_ylim(0, 1)
        ax.set_ylabel("accuracy")
        ax.legend(loc="upper left")
        if title:
            ax.set_title(title)
        ax_lr.plot(ep, [r.lr for r in history.epochs], lw=1.0, color="C2")
        ax_lr.set_ylabel("lr")
        ax_lr.set_xlabel("epoch")
    return _save(fig, path)


def plot_recurrence(series: np.ndarray, plots: list[np.ndarray], path, title: str | None = None):
    """Raw series on the left, recurrence plot on the right, one row per dimension."""
    dims = len(plots)
    with mpl.rc_context(RC):
        fig, axes = _figure(6.0, 2.2 * dims, rows=dims, cols=2)
        for d in range(dims):
            axes[d, 0].plot(series[d], lw=0.8)
            axes[d, 0].set_ylabel(f"dim {d}")
            axes[d, 1].imshow(plots[d], cmap="binary", origin="lower", interpolation="nearest")
            axes[d, 1].set_xticks([])
            axes[d, 1].set_yticks([])
        axes[-1, 0].set_xlabel("time step")
        if title:
            fig.suptitle(title)
    return _save(fig, path)


def plot_final_accuracy(results: dict[str, list[float]], path, title: str | None = None):
    """Per-policy final accuracies, one dot per seed plus the mean."""
    with mpl.rc_context(RC):
        fig, axes = _figure(4.5, 3.0)
        ax = axes[0, 0]
        for i, (name, accs) in enumerate(results.items()):
            ax.scatter([i] * len(accs), accs, s=14, color="C0")
            ax.hlines(np.mean(accs), i - 0.25, i + 0.25, color="C3")
        ax.set_xticks(range(len(results)), list(results))
        ax.set_ylim(0, 1)
        ax.set_ylabel("final test accuracy")
        if title:
            ax.set_title(title)
    return _save(fig, path)
