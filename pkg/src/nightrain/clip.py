"""Video clips and lossless 8-bit frame I/O.

A Clip is a (C, T, H, W) float32 array with a role tag. Pixel-role clips
live in [-1, 1] internally and cross I/O boundaries as [0, 1] values stored
in binary PPM (P6, maxval 255) frames, one file per frame. Quantization is
round-to-nearest, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

ROLES = ("pixel", "latent", "noise", "condition")
FRAME_PATTERN = "frame_{:05d}.ppm"


@dataclass
class Clip:
    data: np.ndarray
    role: str = "pixel"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ShapeError(f"clip must be (C,T,H,W), got {self.data.shape}")
        if self.role not in ROLES:
            raise ShapeError(f"unknown clip role {self.role!r}")
        if self.role == "pixel":
            lo, hi = float(self.data.min(initial=0.0)), float(self.data.max(initial=0.0))
            if lo < -1.0 - 1e-5 or hi > 1.0 + 1e-5:
                raise ShapeError(f"pixel clip out of [-1,1]: range [{lo:.4f}, {hi:.4f}]")

    @property
    def shape(self):
        return self.data.shape

    def copy(self, role: str | None = None) -> "Clip":
        return Clip(self.data.copy(), role or self.role)


def from_unit(arr01: np.ndarray, role: str = "pixel") -> Clip:
    """[0,1] I/O values to the internal [-1,1] convention."""
    return Clip(2.0 * np.asarray(arr01, dtype=np.float32) - 1.0, role)


def to_unit(clip: Clip) -> np.ndarray:
    """Internal [-1,1] back to clamped [0,1] I/O values."""
    return np.clip((clip.data + 1.0) * 0.5, 0.0, 1.0)


def quantize_unit(arr01: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr01, 0.0, 1.0) * 255.0).astype(np.uint8)


# ------------------------------------------------------------------ P6 files

_PPM_HEADER = re.compile(rb"^P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def write_ppm(path, frame_u8: np.ndarray) -> None:
    """frame_u8: (H, W, 3) uint8."""
    h, w, c = frame_u8.shape
    if c != 3 or frame_u8.dtype != np.uint8:
        raise ShapeError(f"P6 frame must be (H,W,3) uint8, got {frame_u8.shape} {frame_u8.dtype}")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(frame_u8.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    m = _PPM_HEADER.match(blob)
    if not m:
        raise DataError(f"malformed P6 header in {path}")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise DataError(f"unsupported maxval {maxval} in {path} (only 255)")
    payload = blob[m.end():]
    need = w * h * 3
    if len(payload) != need:
        raise DataError(f"P6 payload in {path} is {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def save_clip(clip: Clip, dirpath) -> None:
    """Write a 3-channel clip as zero-padded numbered P6 frames."""
    c, t, h, w = clip.shape
    if c != 3:
        raise DataError(f"frame I/O needs 3 channels, clip has {c}")
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    frames = quantize_unit(to_unit(clip))  # (3,T,H,W) -> u8
    for i in range(t):
        write_ppm(d / FRAME_PATTERN.format(i), np.moveaxis(frames[:, i], 0, -1))


def frame_paths(dirpath) -> list[Path]:
    d = Path(dirpath)
    if not d.is_dir():
        raise DataError(f"frame folder {d} does not exist")
    paths = sorted(d.glob("frame_*.ppm"))
    if not paths:
        raise DataError(f"no frames found in {d}")
    return paths


def load_clip(dirpath, expect_frames: int | None = None) -> Clip:
    """Read a frame folder back into a pixel-role clip.

    Raises DataError on missing frames, inconsistent frame sizes, or when the
    frame count disagrees with expect_frames (the manifest's word).
    """
    paths = frame_paths(dirpath)
    if expect_frames is not None and len(paths) != expect_frames:
        raise DataError(f"{dirpath}: manifest says {expect_frames} frames, folder has {len(paths)}")
    frames = []
    for p in paths:
        fr = read_ppm(p)
        if frames and fr.shape != frames[0].shape:
            raise DataError(f"frame size mismatch in {dirpath}: {fr.shape} vs {frames[0].shape}")
        frames.append(fr)
    stack = np.stack(frames, axis=0).astype(np.float32) / 255.0  # (T,H,W,3)
    return from_unit(np.moveaxis(stack, -1, 0))  # (3,T,H,W)
