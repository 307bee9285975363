"""Figures written next to the TSV reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def loss_curve(rows, path) -> None:
    """rows: (iteration, lr, l1, color, total) tuples."""
    if not rows:
        return
    arr = np.asarray(rows, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(arr[:, 0], arr[:, 4], label="total")
    ax.semilogy(arr[:, 0], arr[:, 2], label="l1", alpha=0.7)
    ax.semilogy(arr[:, 0], np.maximum(arr[:, 3], 1e-12), label="color", alpha=0.7)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def metric_bars(report, path, key: str = "psnr_rgb") -> None:
    names = [r["name"] for r in report.rows]
    vals = [r[key] for r in report.rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(names) + 2), 4))
    ax.bar(range(len(vals)), vals)
    ax.axhline(report.aggregate()[key], color="k", linestyle="--", linewidth=1, label="mean")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel(key)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def beta_bars(betas, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(np.arange(1, len(betas) + 1), betas)
    ax.set_xlabel("block")
    ax.set_ylabel("beta")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def heatmap(values: np.ndarray, path) -> None:
    """Write a [0, 1] map as a jet-coloured PNG at native resolution."""
    plt.imsave(path, np.clip(values, 0.0, 1.0), cmap="jet", vmin=0.0, vmax=1.0)
