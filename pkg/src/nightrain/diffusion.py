"""Noise schedule, forward noising, conditional training loss, and the
deterministic conditional reverse sampler.

The reverse update between visited steps t -> t_prev is

    x_prev = sqrt(abar_prev) * (x_t - sqrt(1-abar_t) * eps) / sqrt(abar_t)
           + sqrt(1-abar_prev) * eps

with abar_0 = 1, applied along an evenly spaced decreasing subsequence of
{1..T}. No randomness is injected after the initial x_T draw, so sampling is
a pure function of (params, condition, seed, schedule, steps).

The noise network argument everywhere is either a named-parameter dict (the
transformer in nightrain.model) or any callable with the same batched
signature net(x_t, cond, t_vec) -> (B,3,T,H,W); tests exploit the latter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as _model
from . import tensor as T
from .clip import Clip
from .errors import ConfigError, DegeneratePairError, ShapeError
from .rng import CounterRng
from .tensor import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables; alpha_bars has T+1 entries with alpha_bars[0] = 1."""

    steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise ValueError(f"t={t} outside schedule range [0, {self.steps}]")
        return float(self.alpha_bars[t])


def make_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if steps < 1:
        raise ConfigError(f"schedule needs at least one step, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(steps, betas, alphas, alpha_bars)


# -------------------------------------------------------------- forward pass


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 0 <= t <= sched.steps:
        raise ValueError(f"diffusion step t={t} out of range [0, {sched.steps}]")


def forward_noise(x0: Clip, t: int, eps: Clip, sched: NoiseSchedule) -> Clip:
    """sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps; t=0 returns x0 exactly."""
    _check_t(t, sched)
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = sched.alpha_bar(t)
    data = np.float32(np.sqrt(ab)) * x0.data + np.float32(np.sqrt(1.0 - ab)) * eps.data
    return Clip(data, "latent")


def forward_noise_batch(x0s: np.ndarray, ts: np.ndarray, epss: np.ndarray,
                        sched: NoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bars[np.asarray(ts)]
    bshape = (-1,) + (1,) * (x0s.ndim - 1)
    a = np.sqrt(ab).astype(x0s.dtype).reshape(bshape)
    b = np.sqrt(1.0 - ab).astype(x0s.dtype).reshape(bshape)
    return a * x0s + b * epss


def _call_net(params, x_t: np.ndarray, cond: np.ndarray, ts: np.ndarray):
    if callable(params):
        out = params(x_t, cond, ts)
        return out if isinstance(out, Tensor) else Tensor(out)
    return _model.predict_noise_batch(params, x_t, cond, ts)


# ------------------------------------------------------------- training loss


def training_loss_batch(params, x0s: np.ndarray, conds: np.ndarray, ts: np.ndarray,
                        epss: np.ndarray, sched: NoiseSchedule,
                        masks: np.ndarray | None = None) -> Tensor:
    """Mean over the batch of per-clip masked noise-estimation losses.

    Each clip's squared error is normalized by its own count of unmasked
    elements, so a half-frame mask and a full mask weigh uniform errors the
    same. masks is (B, T, H, W) in {0,1} broadcast over channels, or None
    for all-ones.
    """
    b, c = x0s.shape[0], x0s.shape[1]
    if conds.shape != x0s.shape:
        raise ShapeError(f"condition shape {conds.shape} != target shape {x0s.shape}")
    if masks is not None:
        counts = masks.reshape(b, -1).sum(axis=1) * c
        if np.any(counts == 0):
            raise DegeneratePairError("all-zero mask in batch; skip this pair")
    else:
        counts = np.full(b, x0s[0].size, dtype=np.float64)
    x_t = forward_noise_batch(x0s, ts, epss, sched)
    pred = _call_net(params, x_t, conds, np.asarray(ts))
    diff = T.square(T.sub(Tensor(epss), pred))
    if masks is not None:
        diff = T.mul(diff, Tensor(masks[:, None]))
    per_clip = T.sum_t(diff, axis=tuple(range(1, x0s.ndim)))  # (B,)
    weights = (1.0 / (counts * b)).astype(x0s.dtype)
    return T.sum_t(T.mul(per_clip, Tensor(weights)))


def training_loss(params, x0: Clip, cond: Clip, t: int, eps: Clip,
                  sched: NoiseSchedule, mask: np.ndarray | None = None) -> Tensor:
    """Single-clip form of the masked noise-estimation objective."""
    _check_t(t, sched)
    return training_loss_batch(
        params,
        x0.data[None], cond.data[None], np.array([t]), eps.data[None], sched,
        None if mask is None else np.asarray(mask, dtype=np.float32)[None],
    )


# ------------------------------------------------------------ reverse process


def reverse_step(x_t: Clip, cond: Clip, t: int, t_prev: int, eps_pred: Clip,
                 sched: NoiseSchedule) -> Clip:
    """One deterministic update from step t to t_prev (t_prev < t)."""
    if t_prev >= t:
        raise ValueError(f"reverse_step needs t_prev < t, got {t_prev} >= {t}")
    _check_t(t, sched)
    if cond.shape != x_t.shape or eps_pred.shape != x_t.shape:
        raise ShapeError("reverse_step operands must share geometry")
    out = _reverse_update(x_t.data, eps_pred.data, sched.alpha_bar(t), sched.alpha_bar(t_prev))
    return Clip(out, "latent")


def _reverse_update(x: np.ndarray, eps: np.ndarray, ab_t: float, ab_prev: float) -> np.ndarray:
    dt = x.dtype
    x0_hat = (x - dt.type(np.sqrt(1.0 - ab_t)) * eps) / dt.type(np.sqrt(ab_t))
    return dt.type(np.sqrt(ab_prev)) * x0_hat + dt.type(np.sqrt(1.0 - ab_prev)) * eps


@dataclass(frozen=True)
class SamplerConfig:
    steps: int
    seed: int
    subsequence: tuple

    def __post_init__(self):
        sub = self.subsequence
        if len(sub) < 2 or sub[-1] != 0:
            raise ConfigError("sampler subsequence must end at 0")
        if any(a <= b for a, b in zip(sub, sub[1:])):
            raise ConfigError("sampler subsequence must be strictly decreasing")


def make_sampler_config(total_steps: int, steps: int, seed: int) -> SamplerConfig:
    """Evenly spaced decreasing subsequence T=..=0 with `steps` transitions."""
    if not 1 <= steps <= total_steps:
        raise ConfigError(f"sampler steps {steps} must lie in [1, T={total_steps}]")
    sub = tuple(round(total_steps * i / steps) for i in range(steps, -1, -1))
    return SamplerConfig(steps=steps, seed=seed, subsequence=sub)


def sample_batch(params, conds: np.ndarray, seeds: Sequence[int],
                 cfg: SamplerConfig, sched: NoiseSchedule) -> np.ndarray:
    """Run B independent deterministic chains side by side.

    Chain i draws its x_T from CounterRng(seeds[i]); identical seeds give
    bitwise identical chains. Output clamped to [-1,1] at the end only.
    """
    if conds.ndim != 5:
        raise ShapeError(f"conds must be (B,C,T,H,W), got {conds.shape}")
    if len(seeds) != conds.shape[0]:
        raise ShapeError(f"{len(seeds)} seeds for batch of {conds.shape[0]}")
    if cfg.subsequence[0] != sched.steps:
        raise ConfigError(f"sampler subsequence starts at {cfg.subsequence[0]}, schedule has T={sched.steps}")
    x = np.stack([CounterRng(s).normal(conds.shape[1:], dtype=conds.dtype) for s in seeds])
    with T.no_grad():
        for t, t_prev in zip(cfg.subsequence, cfg.subsequence[1:]):
            ts = np.full(conds.shape[0], t, dtype=np.int64)
            eps = _call_net(params, x, conds, ts).data
            x = _reverse_update(x, eps, sched.alpha_bar(t), sched.alpha_bar(t_prev))
    return np.clip(x, -1.0, 1.0)


def sample(params, cond: Clip, cfg: SamplerConfig, sched: NoiseSchedule) -> Clip:
    """Restore one clip from Gaussian noise, guided by the condition clip."""
    out = sample_batch(params, cond.data[None], [cfg.seed], cfg, sched)
    return Clip(out[0], "pixel")
