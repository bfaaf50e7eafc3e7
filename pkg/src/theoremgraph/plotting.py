"""PNG figures for evaluation reports and training histories."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_eval_report(report, path) -> Path:
    """Accuracy per encoder config on the left, termination counts on the right."""
    from .evaluation import TERMINATION_KEYS

    path = Path(path)
    names = [r.config for r in report.rows]
    x = np.arange(len(names))
    fig, (ax_acc, ax_term) = plt.subplots(1, 2, figsize=(9, 3.6))

    ax_acc.bar(x, [r.accuracy for r in report.rows], color="#4c72b0")
    for xi, r in zip(x, report.rows):
        ax_acc.text(xi, r.accuracy + 0.02, f"{r.accuracy:.3f}", ha="center", fontsize=8)
    ax_acc.set_xticks(x, names)
    ax_acc.set_ylim(0, 1.1)
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_title("answer accuracy")

    bottom = np.zeros(len(names))
    for key in TERMINATION_KEYS:
        vals = np.array([r.terminations.get(key, 0.0) for r in report.rows])
        ax_term.bar(x, vals, bottom=bottom, label=key)
        bottom += vals
    ax_term.set_xticks(x, names)
    ax_term.set_ylabel("runs (mean over repeats)")
    ax_term.set_title("termination")
    ax_term.legend(fontsize=7)

    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history: Sequence, path) -> Path:
    """Loss and training-set top-1 retrieval per epoch."""
    path = Path(path)
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(epochs, [h.mean_loss for h in history], marker="o", ms=3, label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("InfoNCE loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h.retrieval_top1 for h in history], color="#dd8452", marker="s", ms=3, label="top-1")
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("top-1 retrieval")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="center right", fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
