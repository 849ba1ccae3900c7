"""Figure rendering for stage reports (decision curves, distribution scatter,
training history). Figures are written next to the delimited exports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .decide import DecisionCurve, ThresholdChoice
from .evaluate import DistributionComparison


def plot_decision_curve(
    curve: DecisionCurve, path: str | Path, choice: ThresholdChoice | None = None
) -> None:
    """Two panels: manual share per threshold, and total error per manual share."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    t = np.asarray(curve.thresholds)
    mf = np.asarray(curve.manual_fraction)
    te = np.asarray(curve.total_error)

    ax1.plot(t, mf, lw=1.5)
    ax1.set_xlabel("confidence threshold")
    ax1.set_ylabel("fraction sent to manual verification")
    ax1.grid(alpha=0.3)

    order = np.argsort(mf)
    ax2.plot(mf[order], te[order], lw=1.5)
    ax2.set_xlabel("fraction sent to manual verification")
    ax2.set_ylabel("total error rate")
    ax2.grid(alpha=0.3)

    if choice is not None:
        ax1.axvline(choice.threshold, color="crimson", ls="--", lw=1)
        ax1.annotate(
            f"t={choice.threshold:.2f}",
            (choice.threshold, choice.manual_fraction),
            textcoords="offset points",
            xytext=(6, 6),
            color="crimson",
        )
        ax2.axvline(choice.manual_fraction, color="crimson", ls="--", lw=1)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_distribution_scatter(comp: DistributionComparison, path: str | Path) -> None:
    """Reference vs predicted class frequencies; the diagonal marks agreement."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    p = np.asarray(comp.reference_freq)
    q = np.asarray(comp.predicted_freq)
    deviants = set(comp.deviating)
    colors = ["crimson" if c in deviants else "steelblue" for c in comp.classes]
    ax.scatter(p, q, s=14, c=colors, alpha=0.75, edgecolors="none")
    lim = max(p.max(), q.max()) * 1.1 if len(p) else 1.0
    floor = 1e-5
    ax.plot([floor, lim], [floor, lim], color="gray", lw=1, ls="--")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlim(floor, lim)
    ax.set_ylim(floor, lim)
    ax.set_xlabel("class frequency in reference")
    ax.set_ylabel("class frequency in predictions")
    ax.set_title(f"TV distance {comp.tv_distance:.4f}; {len(deviants)} deviating classes")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_training_history(history, path: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    epochs = [h.epoch for h in history]
    ax1.plot(epochs, [h.train_loss for h in history], label="train")
    ax1.plot(epochs, [h.val_loss for h in history], label="validation")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [h.train_accuracy for h in history], label="train")
    ax2.plot(epochs, [h.val_accuracy for h in history], label="validation")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("exact-match accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
