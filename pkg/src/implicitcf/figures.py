"""Rendering of training curves, sweep trends and rank histograms to files.

Uses the Agg backend so figures render headlessly; every function writes a
PNG next to the delimited data it illustrates.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport
from .training import TrainHistory


def plot_training_history(history: TrainHistory, path: str | os.PathLike,
                          title: str = "") -> None:
    """Loss per epoch; HR/NDCG on a twin axis where evaluated."""
    epochs = [0] + [e.epoch for e in history.entries]
    losses = [history.initial_loss] + [e.loss for e in history.entries]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(epochs, losses, marker="o", markersize=3, color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE loss")
    ax.grid(alpha=0.3)

    metric_epochs = [0] if history.initial_hr is not None else []
    hrs = [history.initial_hr] if history.initial_hr is not None else []
    ndcgs = [history.initial_ndcg] if history.initial_ndcg is not None else []
    for e in history.entries:
        if e.hr is not None:
            metric_epochs.append(e.epoch)
            hrs.append(e.hr)
            ndcgs.append(e.ndcg)
    if metric_epochs:
        ax2 = ax.twinx()
        ax2.plot(metric_epochs, hrs, marker="s", markersize=3, color="tab:green",
                 label="HR")
        ax2.plot(metric_epochs, ndcgs, marker="^", markersize=3, color="tab:orange",
                 label="NDCG")
        ax2.set_ylabel("ranking metric")
        ax2.set_ylim(0, 1)
        lines, labels = ax.get_legend_handles_labels()
        lines2, labels2 = ax2.get_legend_handles_labels()
        ax.legend(lines + lines2, labels + labels2, loc="center right", fontsize=8)
    else:
        ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(values, hrs, ndcgs, xlabel: str, path: str | os.PathLike,
               title: str = "") -> None:
    """HR/NDCG trend over one hyper-parameter axis."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(values, hrs, marker="o", color="tab:green", label="HR")
    ax.plot(values, ndcgs, marker="^", color="tab:orange", label="NDCG")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("metric")
    ax.set_xticks(list(values))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rank_histogram(report: EvalReport, path: str | os.PathLike,
                        title: str = "") -> None:
    """Distribution of the held-out item's rank across users."""
    ranks = np.asarray([r.rank for r in report.per_user])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.hist(ranks, bins=np.arange(1, ranks.max() + 2) - 0.5, color="tab:blue",
            alpha=0.8)
    ax.axvline(report.k + 0.5, color="tab:red", linestyle="--", linewidth=1,
               label=f"top-{report.k} cutoff")
    ax.set_xlabel("rank of held-out item")
    ax.set_ylabel("users")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
