"""Frame I/O, scene/rain generation, and dataset layout."""

import numpy as np
import pytest

from nightrain import clip as C
from nightrain import metrics as ME
from nightrain import synth as S
from nightrain.clip import Clip
from nightrain.errors import ConfigError, DataError, ShapeError


def scene(seed=3, **kw):
    base = dict(seed=seed, frames=4, height=16, width=16)
    base.update(kw)
    return S.SceneSpec(**base)


class TestClipType:
    def test_pixel_range_enforced(self):
        with pytest.raises(ShapeError):
            Clip(np.full((3, 2, 4, 4), 1.5, np.float32), "pixel")
        Clip(np.full((3, 2, 4, 4), 1.5, np.float32), "latent")  # latents unbounded

    def test_unit_round_trip(self, rng64):
        u = rng64.uniform(0, 1, (3, 2, 4, 4)).astype(np.float32)
        back = C.to_unit(C.from_unit(u))
        np.testing.assert_allclose(back, u, atol=1e-6)

    def test_bad_role_and_rank(self):
        with pytest.raises(ShapeError):
            Clip(np.zeros((3, 4, 4), np.float32), "pixel")
        with pytest.raises(ShapeError):
            Clip(np.zeros((3, 2, 4, 4), np.float32), "wet")


class TestFrameIO:
    def test_quantization_bound(self, rng64, tmp_path):
        u = rng64.uniform(0, 1, (3, 4, 8, 8)).astype(np.float32)
        clip = C.from_unit(u)
        C.save_clip(clip, tmp_path / "v")
        loaded = C.load_clip(tmp_path / "v")
        assert np.abs(C.to_unit(loaded) - u).max() <= 1.0 / 255.0 + 1e-7

    def test_save_load_save_idempotent(self, rng64, tmp_path):
        clip = C.from_unit(rng64.uniform(0, 1, (3, 3, 6, 6)).astype(np.float32))
        C.save_clip(clip, tmp_path / "a")
        once = C.load_clip(tmp_path / "a")
        C.save_clip(once, tmp_path / "b")
        for fa, fb in zip(C.frame_paths(tmp_path / "a"), C.frame_paths(tmp_path / "b")):
            assert fa.read_bytes() == fb.read_bytes()

    def test_frame_count_mismatch(self, rng64, tmp_path):
        clip = C.from_unit(rng64.uniform(0, 1, (3, 3, 6, 6)).astype(np.float32))
        C.save_clip(clip, tmp_path / "v")
        with pytest.raises(DataError):
            C.load_clip(tmp_path / "v", expect_frames=5)

    def test_malformed_header_and_payload(self, tmp_path):
        bad = tmp_path / "frame_00000.ppm"
        bad.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 48)
        with pytest.raises(DataError):
            C.read_ppm(bad)
        bad.write_bytes(b"P6\n4 4\n255\n" + b"\x00" * 10)  # truncated
        with pytest.raises(DataError):
            C.read_ppm(bad)
        bad.write_bytes(b"P6\n4 4\n65535\n" + b"\x00" * 96)
        with pytest.raises(DataError):
            C.read_ppm(bad)

    def test_missing_folder(self, tmp_path):
        with pytest.raises(DataError):
            C.load_clip(tmp_path / "nope")


class TestNightScene:
    def test_black_when_everything_off(self):
        spec = scene(n_lights=0, base_luminance=0.0, sensor_noise_sigma=0.0)
        out = S.gen_night_scene(spec)
        np.testing.assert_array_equal(C.to_unit(out), 0.0)

    def test_deterministic_in_seed(self):
        a = S.gen_night_scene(scene(seed=9))
        b = S.gen_night_scene(scene(seed=9))
        np.testing.assert_array_equal(a.data, b.data)
        c = S.gen_night_scene(scene(seed=10))
        assert np.abs(a.data - c.data).max() > 1e-3

    def test_luminance_grows_with_lights(self):
        means = []
        for n in [0, 2, 4, 8]:
            vals = [C.to_unit(S.gen_night_scene(scene(seed=s, n_lights=n))).mean()
                    for s in range(10)]
            means.append(np.mean(vals))
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_output_is_valid_pixel_clip(self):
        out = S.gen_night_scene(scene(seed=4))
        assert out.role == "pixel"
        assert out.shape == (3, 4, 16, 16)
        assert out.data.min() >= -1.0 and out.data.max() <= 1.0

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            scene(base_luminance=0.3)
        with pytest.raises(ConfigError):
            scene(n_lights=-1)


class TestAddRain:
    def setup_method(self):
        self.clean = S.gen_night_scene(scene(seed=3))

    def test_zero_density_is_identity(self):
        out = S.add_rain(self.clean, S.RainSpec(seed=5, density=0.0))
        np.testing.assert_array_equal(out.data, self.clean.data)

    def test_untouched_pixels_bit_identical(self):
        rained = S.add_rain(self.clean, S.RainSpec(seed=5, density=0.2))
        changed = rained.data != self.clean.data
        assert changed.any()
        # where no channel changed, the pixel carries zero rain alpha; those
        # positions must be exact float copies of the input
        same = ~changed.any(axis=0)
        np.testing.assert_array_equal(rained.data[:, same], self.clean.data[:, same])

    def test_psnr_falls_with_density(self):
        scores = [ME.psnr(S.add_rain(self.clean, S.RainSpec(seed=5, density=d)), self.clean)
                  for d in (0.1, 0.3, 0.5)]
        assert scores[0] > scores[1] > scores[2]

    def test_streaks_advance_by_fall_speed(self):
        # vertical rain at integer speed: the residual field of frame t+1 is
        # frame t rolled by exactly fall_speed rows
        spec = S.RainSpec(seed=5, density=0.3, angle=0.0, fall_speed=3.0)
        rained = S.add_rain(self.clean, spec)
        res = (C.to_unit(rained) - C.to_unit(self.clean)).mean(axis=0)  # (T,H,W)
        corr = [float((np.roll(res[0], k, axis=0) * res[1]).sum()) for k in range(16)]
        assert int(np.argmax(corr)) == 3

    def test_requires_pixel_role(self):
        latent = Clip(self.clean.data, "latent")
        with pytest.raises(ShapeError):
            S.add_rain(latent, S.RainSpec(seed=1))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            S.RainSpec(seed=1, density=1.5)
        with pytest.raises(ConfigError):
            S.RainSpec(seed=1, streak_brightness=0.0)


class TestMakeDataset:
    def make(self, root, **kw):
        base = dict(root=str(root), seed=11, n_paired=2, n_unpaired_rain=1, n_clear=1)
        base.update(kw)
        return S.DatasetSpec(**base)

    def test_manifest_lists_all_videos(self, tmp_path):
        rows = S.make_dataset(self.make(tmp_path))
        assert len(rows) == 4
        assert [r.split for r in rows] == ["paired", "paired", "unpaired_rain", "clear"]
        parsed = S.read_manifest(tmp_path)
        assert [(r.split, r.video_id, r.path) for r in parsed] == \
               [(r.split, r.video_id, r.path) for r in rows]

    def test_regeneration_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        S.make_dataset(self.make(a))
        S.make_dataset(self.make(b))
        assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()
        fa = a / "paired/vid_0001/rain/frame_00002.ppm"
        fb = b / "paired/vid_0001/rain/frame_00002.ppm"
        assert fa.read_bytes() == fb.read_bytes()

    def test_paired_split_is_visibly_rained(self, tmp_path):
        rows = S.make_dataset(self.make(tmp_path))
        for row in S.split_rows(rows, "paired"):
            clean = S.load_video(tmp_path, row, "clean")
            rain = S.load_video(tmp_path, row, "rain")
            score = ME.psnr(rain, clean)
            assert np.isfinite(score) and score < 40.0

    def test_unpaired_rain_hides_clean(self, tmp_path):
        rows = S.make_dataset(self.make(tmp_path))
        row = S.split_rows(rows, "unpaired_rain")[0]
        assert (tmp_path / row.path / "rain").is_dir()
        assert not (tmp_path / row.path / "clean").exists()

    def test_split_seeds_disjoint(self, tmp_path):
        rows = S.make_dataset(self.make(tmp_path, n_paired=3, n_unpaired_rain=3, n_clear=3))
        seeds = [r.params["scene"]["seed"] for r in rows]
        assert len(set(seeds)) == len(seeds)

    def test_shifted_split_rains_harder(self, tmp_path):
        # the unlabeled-rain distribution must corrupt more than the paired one
        spec = self.make(tmp_path, n_paired=6, n_unpaired_rain=0, n_clear=0,
                         n_test_shifted=6)
        rows = S.make_dataset(spec)
        def mean_psnr(split):
            vals = []
            for row in S.split_rows(rows, split):
                vals.append(ME.psnr(S.load_video(tmp_path, row, "rain"),
                                    S.load_video(tmp_path, row, "clean")))
            return np.mean(vals)
        assert mean_psnr("test_shifted") < mean_psnr("paired")

    def test_clear_split_is_brighter(self, tmp_path):
        spec = self.make(tmp_path, n_paired=5, n_unpaired_rain=0, n_clear=5)
        rows = S.make_dataset(spec)
        def mean_lum(split, kind):
            return np.mean([C.to_unit(S.load_video(tmp_path, r, kind)).mean()
                            for r in S.split_rows(rows, split)])
        assert mean_lum("clear", "clean") > mean_lum("paired", "clean")

    def test_manifest_parse_errors(self, tmp_path):
        with pytest.raises(DataError):
            S.read_manifest(tmp_path)
        (tmp_path / "manifest.tsv").write_text("just\ttwo\n")
        with pytest.raises(DataError):
            S.read_manifest(tmp_path)
        (tmp_path / "manifest.tsv").write_text("a\tb\tc\tnot-json\n")
        with pytest.raises(DataError):
            S.read_manifest(tmp_path)
