"""PSNR, SSIM, difference heatmaps, and the metric report format."""

import numpy as np
import pytest

from nightrain import metrics as ME
from nightrain.clip import Clip, from_unit, read_ppm
from nightrain.errors import DataError, ShapeError


def unit_clip(values):
    return from_unit(np.asarray(values, dtype=np.float32))


class TestPsnr:
    def test_identical_hits_cap(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        assert ME.psnr(a, a) == 99.0

    def test_constant_offset_closed_form(self):
        a = unit_clip(np.full((3, 2, 16, 16), 0.25))
        b = unit_clip(np.full((3, 2, 16, 16), 0.35))
        assert ME.psnr(a, b) == pytest.approx(20.0, abs=1e-4)

    def test_symmetric(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        b = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        assert ME.psnr(a, b) == ME.psnr(b, a)

    def test_monotone_in_noise_level(self, rng64):
        base = rng64.uniform(0.2, 0.8, (3, 2, 16, 16))
        noise = rng64.standard_normal(base.shape)
        scores = []
        for sigma in (0.01, 0.05, 0.1, 0.2):
            scores.append(ME.psnr(unit_clip(base), unit_clip(np.clip(base + sigma * noise, 0, 1))))
        assert all(x > y for x, y in zip(scores, scores[1:]))
        assert all(s >= 0 for s in scores)

    def test_shape_mismatch(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        b = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 8)))
        with pytest.raises(ShapeError):
            ME.psnr(a, b)


class TestSsim:
    def test_identical_is_exactly_one(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        assert ME.ssim(a, a) == 1.0

    def test_inversion_scores_low(self, rng64):
        u = rng64.uniform(0, 1, (3, 2, 16, 16))
        assert ME.ssim(unit_clip(u), unit_clip(1.0 - u)) < 0.3

    def test_noise_sits_between(self, rng64):
        u = rng64.uniform(0, 1, (3, 2, 16, 16))
        noisy = np.clip(u + 0.05 * rng64.standard_normal(u.shape), 0, 1)
        s = ME.ssim(unit_clip(u), unit_clip(noisy))
        assert ME.ssim(unit_clip(u), unit_clip(1.0 - u)) < s < 1.0

    def test_symmetric(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        b = unit_clip(rng64.uniform(0, 1, (3, 2, 16, 16)))
        assert ME.ssim(a, b) == pytest.approx(ME.ssim(b, a), abs=1e-12)

    def test_window_too_large(self, rng64):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 8, 8)))
        with pytest.raises(ShapeError):
            ME.ssim(a, a)


class TestHeatmap:
    def test_palette_endpoints(self):
        rgb = ME.heat_palette(np.array([0.0, 0.5, 0.9]))
        np.testing.assert_array_equal(rgb[0], [0, 0, 255])    # no difference
        np.testing.assert_array_equal(rgb[1], [255, 0, 0])    # at scale end
        np.testing.assert_array_equal(rgb[2], [255, 0, 0])    # clamped above

    def test_identical_clips_render_blue(self, rng64, tmp_path):
        a = unit_clip(rng64.uniform(0, 1, (3, 2, 8, 8)))
        paths = ME.diff_heatmap(a, a, tmp_path / "heat")
        assert len(paths) == 2
        for p in paths:
            frame = read_ppm(p)
            np.testing.assert_array_equal(frame, np.broadcast_to([0, 0, 255], frame.shape))

    def test_single_pixel_difference_localized(self, tmp_path):
        u = np.full((3, 1, 8, 8), 0.2, np.float32)
        v = u.copy()
        v[:, 0, 3, 5] = 0.7  # L1 of 0.5 -> pure red
        paths = ME.diff_heatmap(unit_clip(u), unit_clip(v), tmp_path / "heat")
        frame = read_ppm(paths[0])
        np.testing.assert_array_equal(frame[3, 5], [255, 0, 0])
        mask = np.ones((8, 8), bool)
        mask[3, 5] = False
        np.testing.assert_array_equal(frame[mask], np.broadcast_to([0, 0, 255], (63, 3)))

    def test_l1_map_channel_average(self):
        u = np.zeros((3, 1, 4, 4), np.float32)
        v = u.copy()
        v[0, 0, 1, 1] = 0.6  # single channel: map sees 0.2 after averaging
        d = ME.l1_map(unit_clip(u), unit_clip(v))
        assert d[0, 1, 1] == pytest.approx(0.2, abs=1e-6)
        assert d.sum() == pytest.approx(0.2, abs=1e-6)


class TestReport:
    def test_round_trip(self, tmp_path):
        rep = ME.MetricReport()
        rep.add("vid_a", 21.5, 0.81)
        rep.add("vid_b", 24.25, 0.9)
        ME.write_report(rep, tmp_path / "r.tsv")
        back = ME.read_report(tmp_path / "r.tsv")
        assert back.clip_ids == ["vid_a", "vid_b"]
        np.testing.assert_allclose(back.psnr_db, [21.5, 24.25], atol=1e-4)
        np.testing.assert_allclose(back.ssim, [0.81, 0.9], atol=1e-6)
        assert back.mean_psnr == pytest.approx(rep.mean_psnr, abs=1e-4)

    def test_header_carries_means(self, tmp_path):
        rep = ME.MetricReport()
        rep.add("x", 30.0, 0.5)
        ME.write_report(rep, tmp_path / "r.tsv")
        text = (tmp_path / "r.tsv").read_text()
        assert "# mean_psnr_db\t30.0000" in text
        assert "# mean_ssim\t0.500000" in text
        assert text.count("\n") == 5  # 3 comment lines, header, one row

    def test_malformed_reports_rejected(self, tmp_path):
        with pytest.raises(DataError):
            ME.read_report(tmp_path / "missing.tsv")
        bad = tmp_path / "bad.tsv"
        bad.write_text("clip_id\tpsnr_db\n")
        with pytest.raises(DataError):
            ME.read_report(bad)
        bad.write_text("clip_id\tpsnr_db\tssim\nrow\t1.0\n")
        with pytest.raises(DataError):
            ME.read_report(bad)
