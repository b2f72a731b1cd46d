"""Matplotlib renderings of run artifacts: loss curves next to the loss log,
metric bar charts next to the metric report. Headless (Agg) always."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np

from .metrics import MetricReport


def save_loss_curve(losses, path, title: str = "training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    steps = np.arange(1, len(losses) + 1)
    ax.plot(steps, losses, lw=0.7, alpha=0.6, color="tab:blue", label="per step")
    if len(losses) >= 20:
        k = max(5, len(losses) // 50)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(k, len(losses) + 1), smooth, lw=1.8,
                color="tab:red", label=f"{k}-step mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if len(losses):
        ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(report: MetricReport, out_dir) -> list[Path]:
    """psnr_db.png and ssim.png: one bar per clip, the split mean as a line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    panels = (("psnr_db", report.psnr_db, report.mean_psnr, "PSNR (dB)"),
              ("ssim", report.ssim, report.mean_ssim, "SSIM"))
    written = []
    for name, values, mean, label in panels:
        fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(values) + 2.0), 4.0))
        ax.bar(range(len(values)), values, color="tab:blue")
        if values:
            ax.axhline(mean, color="tab:red", lw=1.2, label=f"mean = {mean:.4f}")
            ax.legend(loc="lower right")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(report.clip_ids, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel(label)
        ax.set_title(f"{label} per clip")
        fig.tight_layout()
        target = out_dir / f"{name}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    return written
