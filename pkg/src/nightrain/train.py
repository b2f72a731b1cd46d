"""Supervised pretraining on the paired synthetic split.

Each optimizer step draws videos_per_step videos with replacement and takes
clips_per_video (t, noise) instances from each, so the batch holds P*K
noised clips conditioned on their rain versions with all-ones masks. Step
randomness is keyed by (seed, step), which makes resuming from any saved
step bit-exact. The teacher is refreshed to an exact student copy at every
checkpoint and at completion; EMA tracking only begins in self-training.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .config import Config
from .diffusion import training_loss_batch
from .errors import DataError, NumericsError
from .model import init_params
from .optim import adam_step, collect_grads, zero_grads
from .rng import CounterRng, derive_seed
from .selftrain import from_pretrained


def init_run(cfg: Config) -> Checkpoint:
    """Step-0 state: freshly initialized student, teacher = student copy."""
    student = init_params(cfg.model_config(), seed=derive_seed(cfg.seed, "init"))
    return Checkpoint(config=cfg, step=0,
                      ts=from_pretrained(student, ema_decay=cfg.ema_decay),
                      adam=cfg.adam_state())


def _sync_teacher(ckpt: Checkpoint) -> None:
    ckpt.ts = from_pretrained(ckpt.ts.student, ema_decay=ckpt.config.ema_decay)


def _numeric_abort(step: int, loss_val: float, student) -> None:
    worst = sorted(((float(np.abs(t.data).max()), name)
                    for name, t in student.tensors.items()), reverse=True)[:3]
    detail = ", ".join(f"{name} |w|max={mag:.3e}" for mag, name in worst)
    raise NumericsError(
        f"non-finite pretraining loss {loss_val} at step {step}; "
        f"largest parameters: {detail}")


def pretrain_step(ckpt: Checkpoint, videos, step: int) -> float:
    """One supervised update; videos is a sequence of (clean, rain) Clips."""
    cfg = ckpt.config
    sched = cfg.schedule()
    student = ckpt.ts.student
    rng = CounterRng(derive_seed(cfg.seed, "pretrain_step", step))
    x0s, conds, ts_arr, epss = [], [], [], []
    for _ in range(cfg.pretrain_videos):
        clean, rain = videos[int(rng.integers(len(videos)))]
        for _ in range(cfg.pretrain_clips):
            x0s.append(clean.data)
            conds.append(rain.data)
            ts_arr.append(1 + int(rng.integers(sched.steps)))
            epss.append(rng.normal(clean.shape, dtype=np.float32))
    loss = training_loss_batch(student, np.stack(x0s), np.stack(conds),
                               np.asarray(ts_arr), np.stack(epss), sched)
    loss_val = loss.item()
    if not np.isfinite(loss_val):
        _numeric_abort(step, loss_val, student)
    zero_grads(student.tensors)
    T.backward(loss)
    adam_step(student.tensors, collect_grads(student.tensors), ckpt.adam)
    return loss_val


def pretrain_loop(ckpt: Checkpoint, videos, on_step=None, save_fn=None) -> list:
    """Run pretraining from ckpt.step up to the configured budget.

    save_fn(ckpt) fires on checkpoint_interval boundaries with the teacher
    already synced to the student, so every artifact on disk is a valid
    self-training starting point.
    """
    if not videos:
        raise DataError("paired split is empty; run synth first")
    cfg = ckpt.config
    losses = []
    for step in range(ckpt.step, cfg.pretrain_steps):
        loss = pretrain_step(ckpt, videos, step)
        ckpt.step = step + 1
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
        if save_fn is not None and ckpt.step % cfg.pretrain_checkpoint_interval == 0:
            _sync_teacher(ckpt)
            save_fn(ckpt)
    _sync_teacher(ckpt)
    return losses
