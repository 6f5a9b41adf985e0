"""Figures written next to the CSV reports."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update(
    {
        "font.size": 9,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
)


def figure_path(csv_path: str | os.PathLike) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_trace(losses: Sequence[float], path, switch_step: int | None = None):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.semilogy(np.arange(len(losses)), losses, lw=1, color="k")
    if switch_step is not None and 0 < switch_step < len(losses):
        ax.axvline(switch_step, ls="--", lw=0.8, color="tab:red", label="AdamW -> SGD")
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("Huber loss (Y)")
    return _save(fig, path)


def plot_eval_report(records, path, baseline=None):
    """Per-image PSNR bars; ``baseline`` (same order) is drawn as markers."""
    names = [r.image_id for r in records]
    x = np.arange(len(names))
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(max(4, 0.35 * len(names) + 2), 4.5), sharex=True)
    a1.bar(x, [r.psnr_db for r in records], color="0.4", label="model")
    a2.bar(x, [r.ssim for r in records], color="0.4")
    if baseline:
        a1.plot(x, [r.psnr_db for r in baseline], "o", ms=3, color="tab:red", label="bicubic")
        a2.plot(x, [r.ssim for r in baseline], "o", ms=3, color="tab:red")
        a1.legend(frameon=False)
    a1.set_ylabel("PSNR (dB, Y)")
    a2.set_ylabel("SSIM (Y)")
    a2.set_xticks(x)
    a2.set_xticklabels(names, rotation=60, ha="right")
    return _save(fig, path)


def plot_bench(samples_ms: Sequence[float], path):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.hist(samples_ms, bins=min(30, max(5, len(samples_ms) // 2)), color="0.5")
    ax.axvline(float(np.median(samples_ms)), color="k", lw=1, label="median")
    ax.set_xlabel("forward latency (ms)")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    return _save(fig, path)
