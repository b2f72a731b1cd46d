"""Full-reference quality metrics and difference heatmaps.

All metrics run in [0,1] I/O space on a dynamic range of 1.0. Clips that
pass through frame files are already 8-bit quantized at that point, so
reported numbers reflect what is actually stored on disk; the report header
records this. Identical inputs report the documented 99 dB cap instead of
infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .clip import Clip, to_unit, write_ppm
from .errors import DataError, ShapeError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
HEAT_SCALE = 0.5  # L1 value mapped to pure red


def _unit_pair(a: Clip, b: Clip):
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return to_unit(a), to_unit(b)


def psnr(a: Clip, b: Clip) -> float:
    """10*log10(1/MSE) in dB, capped at 99 for (near-)identical clips."""
    ua, ub = _unit_pair(a, b)
    mse = float(np.mean((ua - ub) ** 2, dtype=np.float64))
    if mse <= 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # valid-mode Gaussian filtering via explicit windows; frames are small
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("...ij,ij->...", win, kernel)


def ssim(a: Clip, b: Clip) -> float:
    """Mean structural similarity over frames and channels.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0,
    valid-mode windows (no padding).
    """
    ua, ub = _unit_pair(a, b)
    c, t, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"frames {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    scores = []
    for ci in range(c):
        for ti in range(t):
            x = ua[ci, ti].astype(np.float64)
            y = ub[ci, ti].astype(np.float64)
            mx = _windowed_mean(x, kernel)
            my = _windowed_mean(y, kernel)
            mxx = _windowed_mean(x * x, kernel)
            myy = _windowed_mean(y * y, kernel)
            mxy = _windowed_mean(x * y, kernel)
            vx = mxx - mx * mx
            vy = myy - my * my
            cov = mxy - mx * my
            s = ((2 * mx * my + c1) * (2 * cov + c2)) / (
                (mx * mx + my * my + c1) * (vx + vy + c2))
            scores.append(s.mean())
    return float(np.mean(scores))


def l1_map(a: Clip, b: Clip) -> np.ndarray:
    """Channel-averaged absolute difference in [0,1] space; shape (T,H,W)."""
    ua, ub = _unit_pair(a, b)
    return np.abs(ua - ub).mean(axis=0)


def heat_palette(d: np.ndarray) -> np.ndarray:
    """L1 values -> RGB, linear blue (0) to red (>= HEAT_SCALE)."""
    r = np.round(255.0 * np.minimum(d, HEAT_SCALE) / HEAT_SCALE).astype(np.uint8)
    rgb = np.zeros(d.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = r
    rgb[..., 2] = 255 - r
    return rgb


def diff_heatmap(a: Clip, b: Clip, dirpath) -> list[Path]:
    """Render the per-frame difference map as P6 files; returns frame paths."""
    rgb = heat_palette(l1_map(a, b))  # (T,H,W,3)
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(rgb.shape[0]):
        p = d / f"heat_{t:05d}.ppm"
        write_ppm(p, rgb[t])
        paths.append(p)
    return paths


# -------------------------------------------------------------------- reports


@dataclass
class MetricReport:
    """Per-clip scores in manifest order plus split means."""

    clip_ids: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, clip_id: str, psnr_value: float, ssim_value: float) -> None:
        self.clip_ids.append(clip_id)
        self.psnr_db.append(float(psnr_value))
        self.ssim.append(float(ssim_value))

    def __len__(self) -> int:
        return len(self.clip_ids)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")


def write_report(report: MetricReport, path) -> None:
    lines = [
        "# metrics computed on [0,1] I/O-space frames as stored (8-bit)",
        f"# mean_psnr_db\t{report.mean_psnr:.4f}",
        f"# mean_ssim\t{report.mean_ssim:.6f}",
        "clip_id\tpsnr_db\tssim",
    ]
    for cid, p, s in zip(report.clip_ids, report.psnr_db, report.ssim):
        lines.append(f"{cid}\t{p:.4f}\t{s:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> MetricReport:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no metric report at {path}")
    report = MetricReport()
    body = [ln for ln in path.read_text(encoding="utf-8").splitlines()
            if ln.strip() and not ln.startswith("#")]
    if not body or body[0].split("\t") != ["clip_id", "psnr_db", "ssim"]:
        raise DataError(f"{path}: missing metric header row")
    for ln in body[1:]:
        parts = ln.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}: malformed row {ln!r}")
        report.add(parts[0], float(parts[1]), float(parts[2]))
    return report
