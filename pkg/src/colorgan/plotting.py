"""Figures written next to the text reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_losses(metrics: list[dict], path) -> Path:
    """Loss curves and discriminator outputs per iteration."""
    path = Path(path)
    it = [row["iter"] for row in metrics]
    fig, (ax_loss, ax_prob) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(it, [row["loss_d"] for row in metrics], label="discriminator")
    ax_loss.plot(it, [row["loss_g"] for row in metrics], label="generator")
    l1 = [row["l1_term"] for row in metrics]
    if any(v != 0 for v in l1):
        ax_loss.plot(it, l1, label="L1 gray term")
    ax_loss.axhline(2 * np.log(2), color="gray", lw=0.8, ls="--")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right")
    ax_prob.plot(it, [row["d_real_mean"] for row in metrics], label="D(real)")
    ax_prob.plot(it, [row["d_fake_mean"] for row in metrics], label="D(fake)")
    ax_prob.axhline(0.5, color="gray", lw=0.8, ls="--")
    ax_prob.set_xlabel("iteration")
    ax_prob.set_ylabel("mean probability")
    ax_prob.set_ylim(0, 1)
    ax_prob.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_diversity(scores, path, labels=None, title: str = "per-image diversity") -> Path:
    """Bar chart of per-image diversity; ``scores`` may be a dict of named series."""
    path = Path(path)
    series = scores if isinstance(scores, dict) else {"diversity": scores}
    n = max(len(v) for v in series.values())
    x = np.arange(n)
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(max(5, 0.35 * n + 2), 3.5))
    for i, (name, vals) in enumerate(series.items()):
        ax.bar(x + i * width - 0.4 + width / 2, vals, width, label=name)
    if labels is not None:
        ax.set_xticks(x, labels, rotation=90, fontsize=7)
    ax.set_ylabel("std across rounds")
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_consistency(errors: np.ndarray, path, limit: float | None = None) -> Path:
    """Histogram of per-pixel |luma(output) - input gray|."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(np.ravel(errors), bins=50)
    if limit is not None:
        ax.axvline(limit, color="red", ls="--")
    ax.set_xlabel("|luma error| (display range)")
    ax.set_ylabel("pixels")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
