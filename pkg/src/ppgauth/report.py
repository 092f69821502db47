"""Figure rendering for the CLI report paths.

The delimited CSV outputs are the contract; these matplotlib renderings
are companions written alongside them so a run's results can be eyeballed
without post-processing.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_fold_metrics(report, path):
    """Bar chart of per-fold AUC/EER per condition, saved as PNG."""
    conditions = report.conditions()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    width = 0.8 / max(1, len(conditions))
    for metric, ax in zip(("auc", "eer"), axes):
        for ci, condition in enumerate(conditions):
            rows = [r for r in report.fold_rows if r["condition"] == condition]
            folds = np.array([r["fold"] for r in rows], dtype=float)
            ax.bar(folds + ci * width, [r[metric] for r in rows], width, label=condition)
        ax.set_xlabel("fold")
        ax.set_ylabel(metric.upper())
        ax.set_ylim(0, 1)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(sweep_points, path):
    """AUC and EER versus pass rate; undefined points are skipped."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    by_fold = {}
    for fold, p in sweep_points:
        by_fold.setdefault(fold, []).append(p)
    for fold, points in sorted(by_fold.items()):
        pts = [p for p in points if p.defined]
        pts.sort(key=lambda p: p.pass_rate)
        ax.plot(
            [p.pass_rate for p in pts],
            [p.auc for p in pts],
            marker="o",
            markersize=3,
            label=f"fold {fold}",
        )
    ax.set_xlabel("pass rate")
    ax.set_ylabel("AUC on passing pairs")
    ax.set_ylim(0.4, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path):
    """Training losses and label flips per epoch."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(epochs, [h["identity_loss"] for h in history], label="identity loss")
    ax.plot(epochs, [h["quality_loss"] for h in history], label="quality loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE loss")
    ax2 = ax.twinx()
    ax2.bar(
        epochs,
        [h["labels_flipped"] for h in history],
        alpha=0.25,
        color="gray",
        label="labels flipped",
    )
    ax2.set_ylabel("labels flipped")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_grid(rows, axis, path):
    """Ablation results: metric versus setting."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    x = [str(r["setting"]) for r in rows]
    ax.plot(x, [r["auc"] for r in rows], marker="o", label="AUC")
    ax.plot(x, [r["eer"] for r in rows], marker="s", label="EER")
    ax.set_xlabel(axis)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
