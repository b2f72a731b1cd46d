"""Procedural nighttime clear/rain video generation and dataset layout.

Scenes are dark backgrounds with Gaussian glow sources (some driven past 1.0
so they saturate), dark moving rectangles for parallax, and luminance-scaled
sensor noise (stronger where the image is darker). Rain is alpha-composited
bright streaks that advance along their own orientation by fall_speed pixels
per frame, so consecutive frames carry the same streak field shifted.

make_dataset lays out three training splits and optional held-out test
splits. The unpaired rain split is drawn from a deliberately harsher rain
distribution (denser, longer, brighter, and boosted near glow) than the
paired split, and the clear split uses brighter lights; those two gaps are
what the fine-tuning stages are expected to close.

Every clip is a pure function of the dataset seed, the split name, and the
video index, so regeneration is byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clip import Clip, from_unit, load_clip, save_clip, to_unit
from .errors import ConfigError, DataError, ShapeError
from .rng import CounterRng, derive_seed

MANIFEST_NAME = "manifest.tsv"
TRAIN_SPLITS = ("paired", "unpaired_rain", "clear")
TEST_SPLITS = ("test_paired", "test_shifted", "test_clear")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    frames: int
    height: int
    width: int
    n_lights: int = 3
    base_luminance: float = 0.05
    sensor_noise_sigma: float = 0.01
    object_speed: float = 1.0

    def __post_init__(self):
        if min(self.frames, self.height, self.width) < 1:
            raise ConfigError(f"bad scene geometry {(self.frames, self.height, self.width)}")
        if self.n_lights < 0:
            raise ConfigError(f"n_lights must be >= 0, got {self.n_lights}")
        if not 0.0 <= self.base_luminance <= 0.2:
            raise ConfigError(f"base_luminance {self.base_luminance} outside [0, 0.2]")
        if self.sensor_noise_sigma < 0 or self.object_speed < 0:
            raise ConfigError("noise sigma and object speed must be non-negative")


@dataclass(frozen=True)
class RainSpec:
    seed: int
    density: float = 0.3
    angle: float = 0.0           # degrees from vertical
    streak_length: int = 5
    streak_brightness: float = 0.8
    fall_speed: float = 2.0
    glow_boost: float = 0.0      # extra alpha/coverage near bright regions

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"density {self.density} outside [0, 1]")
        if not 0.0 < self.streak_brightness <= 1.0:
            raise ConfigError(f"streak_brightness {self.streak_brightness} outside (0, 1]")
        if self.streak_length < 1 or self.fall_speed < 0 or self.glow_boost < 0:
            raise ConfigError("bad streak geometry")


def gen_night_scene(spec: SceneSpec) -> Clip:
    """Clear nighttime clip: glow blobs, moving dark rectangles, sensor noise."""
    t_n, h, w = spec.frames, spec.height, spec.width
    lights = CounterRng(derive_seed(spec.seed, "lights"))
    objects = CounterRng(derive_seed(spec.seed, "objects"))
    sensor = CounterRng(derive_seed(spec.seed, "sensor"))

    img = np.full((t_n, h, w, 3), spec.base_luminance, dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)

    for _ in range(spec.n_lights):
        cy = float(lights.uniform()) * h
        cx = float(lights.uniform()) * w
        sigma = (0.06 + 0.2 * float(lights.uniform())) * max(h, w)
        amp = 0.4 + 1.2 * float(lights.uniform())  # amp > 1 saturates after clip
        tint = np.array([1.0,
                         0.7 + 0.3 * float(lights.uniform()),
                         0.5 + 0.4 * float(lights.uniform())], dtype=np.float32)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
        img += blob[None, :, :, None] * tint[None, None, None, :]

    # dark silhouettes; multiplicative so an all-black scene stays all black
    for _ in range(1 + int(objects.integers(2))):
        oh = max(1, round(h * (0.15 + 0.2 * float(objects.uniform()))))
        ow = max(1, round(w * (0.15 + 0.2 * float(objects.uniform()))))
        y0 = float(objects.uniform()) * h
        x0 = float(objects.uniform()) * w
        vy = int(objects.integers(3)) - 1
        vx = int(objects.integers(3)) - 1
        if vy == 0 and vx == 0:
            vx = 1
        shade = 0.1 + 0.4 * float(objects.uniform())
        for t in range(t_n):
            top = round(y0 + vy * spec.object_speed * t)
            left = round(x0 + vx * spec.object_speed * t)
            ys = (np.arange(top, top + oh) % h)[:, None]
            xs = (np.arange(left, left + ow) % w)[None, :]
            img[t, ys, xs, :] *= shade

    img = np.clip(img, 0.0, 1.0)
    if spec.sensor_noise_sigma > 0:
        lum = img.mean(axis=-1, keepdims=True)
        noise = sensor.normal(img.shape, dtype=np.float32)
        img = np.clip(img + spec.sensor_noise_sigma * (1.0 - lum) * noise, 0.0, 1.0)
    return from_unit(np.moveaxis(img, -1, 0))


def add_rain(x: Clip, spec: RainSpec) -> Clip:
    """Composite temporally coherent streaks over a clear clip.

    density=0 returns an untouched copy; pixels with zero streak alpha stay
    bit-identical to the input, which keeps paired clips aligned outside rain.
    """
    if x.role != "pixel":
        raise ShapeError(f"add_rain needs a pixel clip, got role {x.role!r}")
    if spec.density == 0.0:
        return x.copy()
    t_n, h, w = x.shape[1], x.shape[2], x.shape[3]
    rng = CounterRng(derive_seed(spec.seed, "streaks"))

    boost = spec.glow_boost
    length = max(1, round(spec.streak_length * (1.0 + 0.5 * boost)))
    count = max(1, round(spec.density * h * w / length * (1.0 + 0.5 * boost)))
    theta = math.radians(spec.angle)
    dy, dx = math.cos(theta), math.sin(theta)

    y0 = rng.uniform((count,)) * h
    x0 = rng.uniform((count,)) * w
    jitter = (spec.streak_brightness * (0.7 + 0.3 * rng.uniform((count,)))).astype(np.float32)

    alpha = np.zeros((t_n, h, w), dtype=np.float32)
    bright = np.zeros((t_n, h, w), dtype=np.float32)
    for t in range(t_n):
        head_y = y0 + t * spec.fall_speed * dy
        head_x = x0 + t * spec.fall_speed * dx
        for s in range(length):
            ys = np.floor(head_y + s * dy).astype(np.int64) % h
            xs = np.floor(head_x + s * dx).astype(np.int64) % w
            a = np.full(count, 0.85 * (0.5 + 0.5 * (s + 1) / length), dtype=np.float32)
            np.maximum.at(alpha[t], (ys, xs), a)
            np.maximum.at(bright[t], (ys, xs), jitter)

    if boost > 0:
        lum = to_unit(x).mean(axis=0)  # (T,H,W) in [0,1]
        alpha = np.minimum(alpha * (1.0 + boost * lum), 1.0)

    streak_internal = 2.0 * bright - 1.0
    out = x.data * (1.0 - alpha[None]) + streak_internal[None] * alpha[None]
    return Clip(out.astype(np.float32), "pixel")


# ------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class SceneRanges:
    lights: tuple = (2, 5)
    base_luminance: tuple = (0.02, 0.08)
    sensor_noise: tuple = (0.005, 0.02)
    speed: tuple = (0.5, 2.0)


@dataclass(frozen=True)
class RainRanges:
    density: tuple = (0.15, 0.4)
    angle: tuple = (-15.0, 15.0)
    length: tuple = (3, 6)
    brightness: tuple = (0.6, 0.9)
    fall_speed: tuple = (1.0, 3.0)


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    seed: int
    frames: int = 4
    height: int = 16
    width: int = 16
    n_paired: int = 4
    n_unpaired_rain: int = 4
    n_clear: int = 4
    n_test_paired: int = 0
    n_test_shifted: int = 0
    n_test_clear: int = 0
    scene: SceneRanges = field(default_factory=SceneRanges)
    rain: RainRanges = field(default_factory=RainRanges)
    # domain shift of the unlabeled rain split relative to the paired one
    ur_density_scale: float = 1.6
    ur_length_scale: float = 1.5
    ur_brightness_scale: float = 1.1
    ur_glow_boost: float = 1.5
    # the clear split is brighter, so saturation artifacts become visible
    uc_extra_lights: int = 2
    uc_luminance_scale: float = 1.6

    def __post_init__(self):
        counts = (self.n_paired, self.n_unpaired_rain, self.n_clear,
                  self.n_test_paired, self.n_test_shifted, self.n_test_clear)
        if min(counts) < 0:
            raise ConfigError("negative video count")


@dataclass(frozen=True)
class ManifestRow:
    split: str
    video_id: str
    path: str
    params: dict


def _uniform_in(rng: CounterRng, bounds) -> float:
    lo, hi = bounds
    return lo + (hi - lo) * float(rng.uniform())


def _int_in(rng: CounterRng, bounds) -> int:
    lo, hi = bounds
    return lo + int(rng.integers(hi - lo + 1))


def _sample_scene(rng: CounterRng, spec: DatasetSpec, seed: int, bright: bool) -> SceneSpec:
    lights = _int_in(rng, spec.scene.lights)
    lum = _uniform_in(rng, spec.scene.base_luminance)
    if bright:
        lights += spec.uc_extra_lights
        lum = min(0.2, lum * spec.uc_luminance_scale)
    return SceneSpec(seed=seed, frames=spec.frames, height=spec.height,
                     width=spec.width, n_lights=lights, base_luminance=lum,
                     sensor_noise_sigma=_uniform_in(rng, spec.scene.sensor_noise),
                     object_speed=_uniform_in(rng, spec.scene.speed))


def _sample_rain(rng: CounterRng, spec: DatasetSpec, seed: int, shifted: bool) -> RainSpec:
    density = _uniform_in(rng, spec.rain.density)
    length = _int_in(rng, spec.rain.length)
    brightness = _uniform_in(rng, spec.rain.brightness)
    boost = 0.0
    if shifted:
        density = min(1.0, density * spec.ur_density_scale)
        length = max(1, round(length * spec.ur_length_scale))
        brightness = min(1.0, brightness * spec.ur_brightness_scale)
        boost = spec.ur_glow_boost
    return RainSpec(seed=seed, density=density,
                    angle=_uniform_in(rng, spec.rain.angle),
                    streak_length=length, streak_brightness=brightness,
                    fall_speed=_uniform_in(rng, spec.rain.fall_speed),
                    glow_boost=boost)


def synth_video(spec: DatasetSpec, split: str, index: int):
    """(clean Clip, rainy Clip | None, params dict) for one video; pure in seed."""
    vid_seed = derive_seed(spec.seed, split, index)
    rng = CounterRng(vid_seed, stream=7)
    bright = split in ("clear", "test_clear")
    shifted = split in ("unpaired_rain", "test_shifted")
    rainy_split = split in ("paired", "test_paired", "unpaired_rain", "test_shifted")

    scene = _sample_scene(rng, spec, derive_seed(vid_seed, "scene"), bright)
    clean = gen_night_scene(scene)
    rain = None
    rainy = None
    if rainy_split:
        rain = _sample_rain(rng, spec, derive_seed(vid_seed, "rain"), shifted)
        rainy = add_rain(clean, rain)
    params = {"scene": asdict(scene), "rain": asdict(rain) if rain else None,
              "frames": spec.frames, "height": spec.height, "width": spec.width}
    return clean, rainy, params


def make_dataset(spec: DatasetSpec) -> list[ManifestRow]:
    """Write all splits under spec.root and return the manifest rows.

    Layout: <root>/<split>/vid_<n>/{clean,rain}/frame_*.ppm. The unpaired
    rain split stores only rain frames (its clean version is never written);
    clear splits store only clean frames; paired splits store both.
    """
    root = Path(spec.root)
    root.mkdir(parents=True, exist_ok=True)
    counts = {"paired": spec.n_paired, "unpaired_rain": spec.n_unpaired_rain,
              "clear": spec.n_clear, "test_paired": spec.n_test_paired,
              "test_shifted": spec.n_test_shifted, "test_clear": spec.n_test_clear}
    rows: list[ManifestRow] = []
    for split in TRAIN_SPLITS + TEST_SPLITS:
        for i in range(counts[split]):
            rel = f"{split}/vid_{i:04d}"
            clean, rainy, params = synth_video(spec, split, i)
            keep_clean = split != "unpaired_rain"
            if keep_clean:
                save_clip(clean, root / rel / "clean")
            if rainy is not None:
                save_clip(rainy, root / rel / "rain")
            rows.append(ManifestRow(split, f"{split}_{i:04d}", rel, params))
    write_manifest(root, rows)
    return rows


def write_manifest(root, rows: list[ManifestRow]) -> None:
    lines = [f"{r.split}\t{r.video_id}\t{r.path}\t{json.dumps(r.params, sort_keys=True)}"
             for r in rows]
    (Path(root) / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(root) -> list[ManifestRow]:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    rows = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{ln}: expected 4 tab-separated fields")
        try:
            params = json.loads(parts[3])
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{ln}: bad parameter blob: {e}") from e
        rows.append(ManifestRow(parts[0], parts[1], parts[2], params))
    return rows


def split_rows(rows: list[ManifestRow], split: str) -> list[ManifestRow]:
    return [r for r in rows if r.split == split]


def load_video(root, row: ManifestRow, kind: str) -> Clip:
    """kind is "clean" or "rain"; frame count is checked against the manifest."""
    if kind not in ("clean", "rain"):
        raise DataError(f"unknown clip kind {kind!r}")
    return load_clip(Path(root) / row.path / kind, expect_frames=row.params.get("frames"))
