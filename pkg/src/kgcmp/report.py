"""Render training and evaluation artifacts: figures beside the tables.

Every report writes a delimited file and a PNG next to each other, so the
numbers stay greppable while the picture gives the shape at a glance.  All
rendering goes through the Agg backend; nothing here needs a display.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .graph import DataError
from .ranking import EvalResult
from .training import TrainStats

FIGURE_DPI = 120


def loss_curve(stats: TrainStats, path: str) -> str:
    """Loss per epoch on a log scale with stage boundaries marked."""
    if not stats.rows:
        raise DataError("no training rows to plot")
    epochs = [row["epoch"] for row in stats.rows]
    losses = [row["loss"] for row in stats.rows]
    stages = [row["stage"] for row in stats.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, color="tab:blue", label="train loss")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    for prev, cur, epoch in zip(stages, stages[1:], epochs[1:]):
        if cur != prev:
            ax.axvline(epoch, color="gray", linestyle=":", linewidth=1)
    val = [(e, row["val_mrr"]) for e, row in zip(epochs, stats.rows)
           if row["val_mrr"] is not None]
    if val:
        twin = ax.twinx()
        twin.plot(*zip(*val), color="tab:orange", marker=".",
                  linestyle="--", label="val MRR")
        twin.set_ylabel("MRR")
        twin.set_ylim(0.0, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def rank_histogram(result: EvalResult, path: str) -> str:
    """Distribution of gold ranks; the mass near one is what matters."""
    if not result.per_query:
        raise DataError("no per-query ranks to plot")
    ranks = np.array([row["rank"] for row in result.per_query])
    top = int(ranks.max())
    bins = np.arange(1, top + 2) - 0.5
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(ranks, bins=bins, color="tab:blue", edgecolor="white")
    ax.set_xlabel("gold rank")
    ax.set_ylabel("queries")
    ax.set_title(f"MRR {result.mrr:.3f}, hits@10 {result.hits10:.3f}, "
                 f"n={result.n_queries}")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def training_report(stats: TrainStats, out_dir: str,
                    stem: str = "training") -> tuple[str, str]:
    """Write `<stem>.csv` and `<stem>.png` into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    png_path = os.path.join(out_dir, f"{stem}.png")
    stats.to_csv(csv_path)
    loss_curve(stats, png_path)
    return csv_path, png_path


def eval_report(result: EvalResult, out_dir: str,
                stem: str = "ranks") -> tuple[str, str]:
    """Write `<stem>.csv` and `<stem>.png` into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    png_path = os.path.join(out_dir, f"{stem}.png")
    result.write_csv(csv_path)
    rank_histogram(result, png_path)
    return csv_path, png_path


def qa_report(losses: list[float], out_dir: str,
              stem: str = "adapt") -> tuple[str, str]:
    """Write the fine-tuning loss table and curve into `out_dir`."""
    if not losses:
        raise DataError("no fine-tuning losses to report")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    png_path = os.path.join(out_dir, f"{stem}.png")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(losses):
            fh.write(f"{epoch},{loss:.9f}\n")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(losses)), losses, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(png_path, dpi=FIGURE_DPI)
    plt.close(fig)
    return csv_path, png_path
