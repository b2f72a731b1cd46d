"""Pretraining loop: first-step loss, progress, resume, and abort paths."""

import numpy as np
import pytest

from nightrain import checkpoint as CK
from nightrain import train as TR
from nightrain.clip import Clip
from nightrain.config import Config, parse_config
from nightrain.errors import DataError, NumericsError


def tiny_config(**overrides):
    cfg = parse_config(
        "[model]\nblocks = 1\nembed_dim = 16\nframes = 2\nheight = 4\n"
        "width = 4\npatch_t = 1\n[schedule]\ntimesteps = 20\nbeta_end = 0.1\n"
        "[sampler]\nsteps = 5\n")
    if overrides:
        cfg = Config(**{**cfg.__dict__, **overrides})
    return cfg


def toy_videos(cfg, n=3, seed=5):
    rng = np.random.default_rng(seed)
    shape = (3, cfg.frames, cfg.height, cfg.width)
    out = []
    for _ in range(n):
        clean = rng.uniform(-0.8, 0.8, shape).astype(np.float32)
        rain = np.clip(clean + rng.uniform(0, 0.4, shape), -1, 1).astype(np.float32)
        out.append((Clip(clean, "pixel"), Clip(rain, "pixel")))
    return out


class TestInitRun:
    def test_teacher_equals_student_at_init(self):
        ckpt = TR.init_run(tiny_config())
        assert ckpt.step == 0
        for k, v in ckpt.ts.student.tensors.items():
            np.testing.assert_array_equal(ckpt.ts.teacher[k].data, v.data)

    def test_deterministic_in_seed(self):
        a = TR.init_run(tiny_config())
        b = TR.init_run(tiny_config())
        np.testing.assert_array_equal(a.ts.student["embed.w"].data,
                                      b.ts.student["embed.w"].data)


class TestPretrain:
    def test_zero_budget_checkpoint_equals_init(self, tmp_path):
        cfg = tiny_config(pretrain_steps=0)
        ckpt = TR.init_run(cfg)
        CK.save_checkpoint(tmp_path / "before.nrck", ckpt)
        losses = TR.pretrain_loop(ckpt, toy_videos(cfg))
        CK.save_checkpoint(tmp_path / "after.nrck", ckpt)
        assert losses == []
        assert (tmp_path / "before.nrck").read_bytes() == \
               (tmp_path / "after.nrck").read_bytes()

    def test_first_loss_is_unit_noise_power(self):
        # zero-init net predicts zero noise, so the loss is mean eps^2
        cfg = tiny_config()
        losses = []
        ckpt = TR.init_run(cfg)
        losses.append(TR.pretrain_step(ckpt, toy_videos(cfg), step=0))
        assert 0.85 < losses[0] < 1.15

    def test_empty_split_rejected(self):
        ckpt = TR.init_run(tiny_config())
        with pytest.raises(DataError):
            TR.pretrain_loop(ckpt, [])

    def test_loss_decreases_on_toy_problem(self):
        cfg = tiny_config(pretrain_steps=150, lr=1e-3)
        ckpt = TR.init_run(cfg)
        losses = TR.pretrain_loop(ckpt, toy_videos(cfg))
        assert ckpt.step == 150
        assert np.mean(losses[-20:]) < 0.75 * np.mean(losses[:20])

    def test_teacher_synced_at_completion(self):
        cfg = tiny_config(pretrain_steps=5)
        ckpt = TR.init_run(cfg)
        TR.pretrain_loop(ckpt, toy_videos(cfg))
        for k, v in ckpt.ts.student.tensors.items():
            np.testing.assert_array_equal(ckpt.ts.teacher[k].data, v.data)

    def test_resume_is_bit_exact(self, tmp_path):
        cfg = tiny_config(pretrain_steps=8, pretrain_checkpoint_interval=4)
        vids = toy_videos(cfg)

        saved = {}
        full = TR.init_run(cfg)
        full_losses = TR.pretrain_loop(
            full, vids, save_fn=lambda c: saved.setdefault(c.step, CK._encode(c)))
        assert sorted(saved) == [4, 8]

        path = tmp_path / "mid.nrck"
        path.write_bytes(saved[4])
        resumed = CK.load_checkpoint(path, expect=cfg)
        tail = TR.pretrain_loop(resumed, vids)
        assert full_losses[4:] == tail
        for k, v in full.ts.student.tensors.items():
            np.testing.assert_array_equal(resumed.ts.student[k].data, v.data)

    def test_on_step_sees_every_step(self):
        cfg = tiny_config(pretrain_steps=3)
        seen = []
        TR.pretrain_loop(TR.init_run(cfg), toy_videos(cfg),
                         on_step=lambda s, l: seen.append(s))
        assert seen == [0, 1, 2]

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite_loss_aborts_with_diagnostics(self):
        cfg = tiny_config()
        ckpt = TR.init_run(cfg)
        # squared errors of a ~1e31 prediction overflow float32 to inf
        ckpt.ts.student["head.w"].data[:] = np.float32(1e30)
        with pytest.raises(NumericsError, match="head"):
            TR.pretrain_step(ckpt, toy_videos(cfg), step=0)
