"""Figure rendering for the report outputs.

Each delimited report file gets a rendered companion: the success-ratio
curve CSV a curve plot, the training metrics CSV a loss/quality plot.
Rendering uses the non-interactive Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["render_curve_figure", "render_metrics_figure"]


def render_curve_figure(curve, out_path) -> None:
    """Success ratio vs cIoU threshold."""
    thresholds = [t for t, _ in curve]
    ratios = [r for _, r in curve]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(thresholds, ratios, marker="o", markersize=3)
    ax.set_xlabel("cIoU threshold")
    ax.set_ylabel("success ratio")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(out_path), dpi=120)
    plt.close(fig)


def render_metrics_figure(rows, out_path) -> None:
    """Mean loss per epoch, with cIoU@0.5 on a second axis when logged."""
    epochs = [r.epoch for r in rows]
    losses = [r.mean_loss for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(epochs, losses, color="tab:blue", label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss", color="tab:blue")
    ax.grid(True, alpha=0.3)
    cious = [(r.epoch, r.ciou_at_0_5) for r in rows if r.ciou_at_0_5 is not None]
    if cious:
        ax2 = ax.twinx()
        ax2.plot([e for e, _ in cious], [c for _, c in cious], color="tab:red", label="cIoU@0.5")
        ax2.set_ylabel("cIoU@0.5", color="tab:red")
        ax2.set_ylim(0.0, 100.0)
    fig.tight_layout()
    fig.savefig(Path(out_path), dpi=120)
    plt.close(fig)
