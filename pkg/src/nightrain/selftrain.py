"""Unsupervised fine-tuning: confidence-gated pseudo-pairs from unlabeled
rain videos and difference pairs from clear videos, trained on a student
whose EMA tracks into the teacher that generates the pseudo-labels.

The teacher is only ever written by ema_update (w_T <- 0.999 w_T + 0.001 w_S)
and never receives gradients; both branches share the one teacher/student
pair. Pseudo-pairs are refreshed from the current teacher every
refresh_interval steps, which also defines the resume boundaries: a run
restarted from a checkpoint on a refresh boundary replays bit-exactly.

The rain-removal branch never sees ground truth: it receives only rain clips
and labels them with the mean of N teacher resamples, keeping pixels whose
across-resample variance stays under t_u. The correction branch rebuilds
clear clips through the teacher and trains on the regions that came back
wrong (channel-mean L1 above t_d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .clip import Clip
from .diffusion import (NoiseSchedule, SamplerConfig, make_sampler_config,
                        sample_batch, training_loss_batch)
from .errors import ConfigError, DegeneratePairError, ShapeError
from .model import ModelParams
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .rng import CounterRng, derive_seed

BRANCHES = ("rain-removal", "correction")


@dataclass
class TeacherStudent:
    teacher: ModelParams
    student: ModelParams
    ema_decay: float = 0.999

    def __post_init__(self):
        t_sig = {k: v.shape for k, v in self.teacher.tensors.items()}
        s_sig = {k: v.shape for k, v in self.student.tensors.items()}
        if t_sig != s_sig:
            raise ShapeError("teacher and student parameter signatures differ")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay {self.ema_decay} outside (0, 1)")


def from_pretrained(student: ModelParams, ema_decay: float = 0.999) -> TeacherStudent:
    """Teacher starts as an exact copy of the pretrained student."""
    return TeacherStudent(teacher=student.clone(requires_grad=False),
                          student=student, ema_decay=ema_decay)


def ema_update(ts: TeacherStudent) -> None:
    """w_T <- decay*w_T + (1-decay)*w_S, accumulated in float64.

    float32 accumulation would drift past the 1e-6 closed-form tolerance
    over a few hundred updates; one cast per update keeps it honest.
    """
    d = ts.ema_decay
    for name, tt in ts.teacher.tensors.items():
        st = ts.student.tensors[name]
        if st.data.shape != tt.data.shape:
            raise ShapeError(f"EMA shape mismatch for {name}")
        mixed = d * tt.data.astype(np.float64) + (1.0 - d) * st.data.astype(np.float64)
        tt.data = mixed.astype(tt.data.dtype)


@dataclass
class ConfidenceMap:
    """Across-resample population variance, channel-averaged; u >= 0."""

    u: np.ndarray          # (T, H, W)
    n: int
    mean: Clip


@dataclass
class PseudoPair:
    condition: Clip
    target: Clip
    mask: np.ndarray       # (T, H, W) in {0, 1}
    branch: str

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ConfigError(f"unknown branch tag {self.branch!r}")
        if self.condition.shape != self.target.shape:
            raise ShapeError(f"pair geometry mismatch: {self.condition.shape} "
                             f"vs {self.target.shape}")
        if self.mask.shape != self.target.shape[1:]:
            raise ShapeError(f"mask shape {self.mask.shape} does not cover "
                             f"clip {self.target.shape}")
        if float(self.mask.sum()) == 0.0:
            raise DegeneratePairError("pseudo-pair with empty mask")


def _teacher_net(ts):
    if isinstance(ts, TeacherStudent):
        return ts.teacher
    return ts  # ModelParams or a callable stub


def confidence_sample(ts, rain: Clip, n: int, seeds: Sequence[int],
                      cfg: SamplerConfig, sched: NoiseSchedule):
    """N teacher restorations of one rain clip -> (mean Clip, ConfidenceMap).

    The N chains differ only in their initial noise; the per-pixel population
    variance of the results, averaged over channels, is the confidence map
    (0 = the teacher always agrees with itself).
    """
    if n < 1:
        raise ConfigError(f"need at least one resample, got {n}")
    if len(seeds) != n:
        raise ConfigError(f"{len(seeds)} seeds for {n} resamples")
    conds = np.broadcast_to(rain.data, (n,) + rain.shape).copy()
    outs = sample_batch(_teacher_net(ts), conds, list(seeds), cfg, sched)
    # float64 statistics: the mean of N identical float32 chains is then
    # exact, so identical seeds give u == 0 bitwise rather than ~eps^2
    outs64 = outs.astype(np.float64)
    mean64 = outs64.mean(axis=0)
    u = ((outs64 - mean64) ** 2).mean(axis=0).mean(axis=0)  # over N, then channels
    mean = Clip(mean64.astype(np.float32), "pixel")
    return mean, ConfidenceMap(u=u.astype(np.float32), n=n, mean=mean)


def binarize_confidence(cmap: ConfidenceMap, t_u: float) -> np.ndarray:
    """1 where variance < t_u (trustworthy), else 0; empty masks are refused."""
    mask = (cmap.u < t_u).astype(np.float32)
    if float(mask.sum()) == 0.0:
        raise DegeneratePairError(f"no pixel is confident under t_u={t_u}")
    return mask


def build_rain_pair(rain: Clip, mean: Clip, mask: np.ndarray) -> PseudoPair:
    """Condition on the rain clip, target the high-confidence teacher mean."""
    return PseudoPair(condition=rain, target=mean, mask=mask, branch="rain-removal")


def augment_condition(x: Clip, seed: int, noise_var: float = 0.2,
                      mask_frac: float = 0.25) -> Clip:
    """Gaussian noise of variance v ~ U(0, noise_var], then zero a fraction
    mask_frac of positions.

    Exactly round(mask_frac*T*H*W) positions are zeroed across all channels.
    The result is a condition-role clip and intentionally not clamped. Both
    strengths at zero make this a pure role change; the desk preset runs
    there because the full-strength corruption destroys the tiny model's
    condition pathway instead of regularizing it.
    """
    if x.role != "pixel":
        raise ShapeError(f"augment_condition needs a pixel clip, got {x.role!r}")
    rng = CounterRng(derive_seed(seed, "augment"))
    c, t, h, w = x.shape
    v = noise_var * float(rng.uniform())
    out = x.data + np.sqrt(v) * rng.normal(x.shape, dtype=np.float32)
    count = round(mask_frac * t * h * w)
    if count:
        flat_positions = rng.choice(t * h * w, count)
        out.reshape(c, -1)[:, flat_positions] = 0.0
    return Clip(out, "condition")


def build_correction_pair(ts, clear: Clip, cfg: SamplerConfig, sched: NoiseSchedule,
                          t_d: float = 0.05, condition_on: str = "prediction"):
    """Round-trip a clear clip through the teacher; pair up where it erred.

    Returns None (skip) when the channel-mean L1 difference never exceeds
    t_d: the teacher already reproduces that clip faithfully. condition_on
    selects what the training condition is: the erroneous prediction
    (default) or the clear clip itself.
    """
    if condition_on not in ("prediction", "clear"):
        raise ConfigError(f"condition_on must be prediction|clear, got {condition_on!r}")
    pred = sample_batch(_teacher_net(ts), clear.data[None], [cfg.seed], cfg, sched)[0]
    d = np.abs(pred - clear.data).mean(axis=0)  # (T,H,W), [-1,1] units
    mask = (d > t_d).astype(np.float32)
    if float(mask.sum()) == 0.0:
        return None
    cond = Clip(pred, "pixel") if condition_on == "prediction" else clear
    return PseudoPair(condition=cond, target=clear, mask=mask, branch="correction")


# ------------------------------------------------------------- training steps


def selftrain_step(ts: TeacherStudent, pairs, sched: NoiseSchedule,
                   rng: CounterRng, adam: AdamState, aug_noise: float = 0.2,
                   aug_mask: float = 0.25) -> float:
    """One student update + EMA on a pair (or a same-step batch of pairs).

    Per pair: random step t in {1..T}, fresh Gaussian target noise, and for
    the rain-removal branch a noised/masked version of the condition.
    """
    if isinstance(pairs, PseudoPair):
        pairs = [pairs]
    if not pairs:
        raise ConfigError("selftrain_step needs at least one pair")
    conds, targets, masks, ts_arr, epss = [], [], [], [], []
    for pair in pairs:
        cond = pair.condition
        if pair.branch == "rain-removal":
            cond = augment_condition(cond, int(rng.integers(2 ** 62)),
                                     aug_noise, aug_mask)
        conds.append(cond.data)
        targets.append(pair.target.data)
        masks.append(pair.mask)
        ts_arr.append(1 + int(rng.integers(sched.steps)))
        epss.append(rng.normal(pair.target.shape, dtype=np.float32))
    loss = training_loss_batch(ts.student, np.stack(targets), np.stack(conds),
                               np.asarray(ts_arr), np.stack(epss), sched,
                               masks=np.stack(masks))
    zero_grads(ts.student.tensors)
    T.backward(loss)
    adam_step(ts.student.tensors, collect_grads(ts.student.tensors), adam)
    ema_update(ts)
    return loss.item()


@dataclass
class SelftrainConfig:
    steps: int = 2000
    batch_clips: int = 4          # pairs drawn per optimizer step
    n_resamples: int = 3
    t_u: float = 0.5
    t_d: float = 0.05
    refresh_interval: int = 200
    sampler_steps: int = 25
    seed: int = 0
    correction_condition: str = "prediction"
    ema_decay: float = 0.999
    rain_ratio: float = 0.5      # fraction of steps fed by the rain branch
    aug_noise: float = 0.2       # condition-augmentation strengths; both 0
    aug_mask: float = 0.25       # disables the corruption entirely

    def __post_init__(self):
        if self.steps < 0 or self.batch_clips < 1 or self.refresh_interval < 1:
            raise ConfigError("bad self-training step/batch/refresh settings")
        if self.n_resamples < 1 or self.t_u <= 0 or self.t_d < 0:
            raise ConfigError("bad confidence settings")
        if not 0.0 <= self.rain_ratio <= 1.0:
            raise ConfigError(f"rain_ratio must lie in [0,1], got {self.rain_ratio}")
        if self.aug_noise < 0 or not 0.0 <= self.aug_mask <= 1.0:
            raise ConfigError("bad condition-augmentation strengths")


def _refresh_rain_pool(ts, rain_clips, st: SelftrainConfig, sched, round_idx: int):
    pool = []
    for ci, rain in enumerate(rain_clips):
        seeds = [derive_seed(st.seed, "confidence", round_idx, ci, k)
                 for k in range(st.n_resamples)]
        cfg = make_sampler_config(sched.steps, st.sampler_steps, seeds[0])
        mean, cmap = confidence_sample(ts, rain, st.n_resamples, seeds, cfg, sched)
        try:
            mask = binarize_confidence(cmap, st.t_u)
        except DegeneratePairError:
            continue  # nothing trustworthy in this clip this round
        pool.append(build_rain_pair(rain, mean, mask))
    return pool


def _refresh_correction_pool(ts, clear_clips, st: SelftrainConfig, sched, round_idx: int):
    pool = []
    for ci, clear in enumerate(clear_clips):
        cfg = make_sampler_config(sched.steps, st.sampler_steps,
                                  derive_seed(st.seed, "correction", round_idx, ci))
        pair = build_correction_pair(ts, clear, cfg, sched, t_d=st.t_d,
                                     condition_on=st.correction_condition)
        if pair is not None:
            pool.append(pair)
    return pool


def selftrain_loop(ts: TeacherStudent, rain_clips: Sequence[Clip],
                   clear_clips: Sequence[Clip], st: SelftrainConfig,
                   sched: NoiseSchedule, adam: AdamState, start_step: int = 0,
                   on_step: Callable | None = None) -> list:
    """Alternate the two branches for st.steps optimizer steps; returns losses.

    Pools of pseudo-pairs are rebuilt from the current teacher whenever the
    global step crosses a refresh boundary. Branches interleave at
    st.rain_ratio (0.5 = strict alternation); when one pool is empty
    (skipped pairs, or an empty split), the other carries the step alone.
    Bit-exact resume is guaranteed for start_steps on refresh boundaries,
    since pools are a pure function of (teacher, seed, round).
    """
    if not rain_clips and not clear_clips:
        raise ConfigError("self-training needs at least one non-empty split")
    losses = []
    rain_pool: list = []
    corr_pool: list = []
    for step in range(start_step, st.steps):
        if step % st.refresh_interval == 0 or not (rain_pool or corr_pool):
            round_idx = step // st.refresh_interval
            rain_pool = _refresh_rain_pool(ts, rain_clips, st, sched, round_idx)
            corr_pool = _refresh_correction_pool(ts, clear_clips, st, sched, round_idx)
            if not rain_pool and not corr_pool:
                raise ConfigError("all pseudo-pairs degenerate; nothing to train on")
        r = st.rain_ratio
        rain_turn = math.floor((step + 1) * r) > math.floor(step * r)
        use_rain = (rain_turn and rain_pool) or not corr_pool
        pool = rain_pool if use_rain else corr_pool
        rng = CounterRng(derive_seed(st.seed, "selftrain_step", step))
        picks = [pool[int(rng.integers(len(pool)))] for _ in range(st.batch_clips)]
        loss = selftrain_step(ts, picks, sched, rng, adam,
                              aug_noise=st.aug_noise, aug_mask=st.aug_mask)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
    return losses
