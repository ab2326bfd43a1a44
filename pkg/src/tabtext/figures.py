"""Render evaluation and training curves to image files.

Figures sit beside their CSV sources: the recall curve mirrors curve.csv and
the loss curve mirrors losscurve.csv. Rendering uses the Agg backend so
headless runs (CI, remote boxes) work without a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def recall_curve_figure(rows: Sequence[tuple[int, float, float]],
                        path: str | Path, title: str = "Recall vs k") -> None:
    """Plot (k, table recall, block recall) rows on a log-k axis."""
    ks = [r[0] for r in rows]
    table = [r[1] for r in rows]
    block = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, table, marker="o", label="table recall")
    ax.plot(ks, block, marker="s", label="block recall")
    if ks and ks[-1] / max(ks[0], 1) >= 10:
        ax.set_xscale("log")
    ax.set_xlabel("k")
    ax.set_ylabel("recall")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curve_figure(rows: Sequence[tuple[int, int, float]],
                      path: str | Path, title: str = "Training loss") -> None:
    """Plot per-step batch losses with per-epoch means overlaid."""
    steps = [r[1] for r in rows]
    losses = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=0.8, alpha=0.5, label="batch loss")
    by_epoch: dict[int, list[float]] = {}
    for epoch, _, loss in rows:
        by_epoch.setdefault(epoch, []).append(loss)
    if by_epoch:
        centers = []
        means = []
        offset = 0
        for epoch in sorted(by_epoch):
            n = len(by_epoch[epoch])
            centers.append(steps[0] + offset + n / 2)
            means.append(sum(by_epoch[epoch]) / n)
            offset += n
        ax.plot(centers, means, marker="o", color="C1", label="epoch mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
