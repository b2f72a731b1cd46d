"""Transformer noise estimator over space-time patch tokens.

The rainy condition clip is concatenated with the noisy state along channels
(6 channels in), split into non-overlapping 3-d patches, and linearly
embedded; the patch embedding is exactly a stride-equals-kernel conv3d. Every
block applies global attention across all tokens of the clip followed by a
pointwise MLP, with shift/scale/gate vectors for both halves produced per
block from the diffusion-step embedding (adaptive layer norm). Modulation
maps, the positional table, and the output head start at zero, so the
untrained network is the identity in its trunk and emits an all-zero noise
estimate; training moves it away from that point smoothly.

Parameters live in a flat name -> Tensor dict so the optimizer, EMA tracking,
and the checkpoint format can treat the model as a list of named arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .clip import Clip
from .errors import ConfigError, ShapeError
from .rng import CounterRng
from .tensor import Tensor

COND_CHANNELS = 6  # noisy state (3) + rainy condition (3), channel-stacked
OUT_CHANNELS = 3


@dataclass(frozen=True)
class ModelConfig:
    """Geometry the network is built for; inputs must match it exactly."""

    frames: int
    height: int
    width: int
    patch: tuple = (2, 2, 2)
    embed_dim: int = 64
    depth: int = 2

    def __post_init__(self):
        pt, ph, pw = self.patch
        if self.frames % pt or self.height % ph or self.width % pw:
            raise ConfigError(
                f"clip geometry ({self.frames},{self.height},{self.width}) "
                f"not divisible by patch {self.patch}")
        if self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be even, got {self.embed_dim}")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")

    @property
    def heads(self) -> int:
        return max(1, self.embed_dim // 64)

    @property
    def grid(self) -> tuple:
        pt, ph, pw = self.patch
        return (self.frames // pt, self.height // ph, self.width // pw)

    @property
    def num_patches(self) -> int:
        tt, hh, ww = self.grid
        return tt * hh * ww

    @property
    def patch_dim(self) -> int:
        pt, ph, pw = self.patch
        return COND_CHANNELS * pt * ph * pw


@dataclass
class ModelParams:
    cfg: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def clone(self, requires_grad: bool = False) -> "ModelParams":
        """Deep copy; the teacher branch starts as a clone of the student."""
        copied = {k: Tensor(v.data.copy(), requires_grad=requires_grad,
                            dtype=v.data.dtype)
                  for k, v in self.tensors.items()}
        return ModelParams(self.cfg, copied)

    def param_count(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Fresh trainable parameters; weights N(0, 0.02), the rest zero.

    Zero covers biases, all modulation maps (per-block and head), the
    positional table, and the output projection: the initial noise estimate
    is identically zero regardless of input.
    """
    rng = CounterRng(seed, stream=1)
    dt = T.default_dtype()
    pt, ph, pw = cfg.patch
    c, out_dim = cfg.embed_dim, OUT_CHANNELS * pt * ph * pw

    def w(*shape):
        return Tensor(0.02 * rng.normal(shape, dtype=dt), requires_grad=True)

    def z(*shape):
        return Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    p = {
        "embed.w": w(cfg.patch_dim, c), "embed.b": z(c),
        "pos": z(1, cfg.num_patches, c),
        "time.w1": w(c, c), "time.b1": z(c),
        "time.w2": w(c, c), "time.b2": z(c),
    }
    for i in range(cfg.depth):
        p[f"blk{i}.mod.w"] = z(c, 6 * c)   # -> shift/scale/gate, msa then mlp
        p[f"blk{i}.mod.b"] = z(6 * c)
        p[f"blk{i}.qkv.w"] = w(c, 3 * c)
        p[f"blk{i}.qkv.b"] = z(3 * c)
        p[f"blk{i}.proj.w"] = w(c, c)
        p[f"blk{i}.proj.b"] = z(c)
        p[f"blk{i}.mlp.w1"] = w(c, 4 * c)
        p[f"blk{i}.mlp.b1"] = z(4 * c)
        p[f"blk{i}.mlp.w2"] = w(4 * c, c)
        p[f"blk{i}.mlp.b2"] = z(c)
    p["head.mod.w"] = z(c, 2 * c)          # -> shift/scale for the final norm
    p["head.mod.b"] = z(2 * c)
    p["head.w"] = z(c, out_dim)
    p["head.b"] = z(out_dim)
    return ModelParams(cfg, p)


# ------------------------------------------------------------ token plumbing


def patchify(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B,C,T,H,W) -> (B,P,C*pt*ph*pw), token order time-major then rows."""
    b, c = x.shape[0], x.shape[1]
    pt, ph, pw = cfg.patch
    tt, hh, ww = cfg.grid
    tok = x.reshape(b, c, tt, pt, hh, ph, ww, pw)
    tok = tok.transpose(0, 2, 4, 6, 1, 3, 5, 7)
    return np.ascontiguousarray(tok).reshape(b, tt * hh * ww, c * pt * ph * pw)


def _unpatchify(tok: Tensor, cfg: ModelConfig) -> Tensor:
    b = tok.shape[0]
    pt, ph, pw = cfg.patch
    tt, hh, ww = cfg.grid
    y = T.reshape(tok, (b, tt, hh, ww, OUT_CHANNELS, pt, ph, pw))
    y = T.transpose(y, (0, 4, 1, 5, 2, 6, 3, 7))
    return T.reshape(y, (b, OUT_CHANNELS, cfg.frames, cfg.height, cfg.width))


def sinusoidal_embedding(ts: np.ndarray, dim: int) -> np.ndarray:
    """Fixed frequency features of the raw step index: [cos(t*f), sin(t*f)]."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(ts, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def time_embedding(params: ModelParams, ts: np.ndarray) -> Tensor:
    """Sinusoidal features pushed through a two-layer MLP; (B, embed_dim)."""
    dt = params["time.w1"].data.dtype
    feats = Tensor(sinusoidal_embedding(ts, params.cfg.embed_dim).astype(dt))
    h = T.gelu(feats @ params["time.w1"] + params["time.b1"])
    return h @ params["time.w2"] + params["time.b2"]


# ------------------------------------------------------------------- forward


def _six_way(mod: Tensor, b: int, c: int):
    return tuple(T.reshape(T.slice_axis(mod, 1, j * c, (j + 1) * c), (b, 1, c))
                 for j in range(6))


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return T.layer_norm(x) * (1.0 + scale) + shift


def _attention(params: ModelParams, i: int, x: Tensor, return_probs: bool = False):
    cfg = params.cfg
    b, pn, c = x.shape
    heads, hd = cfg.heads, cfg.embed_dim // cfg.heads
    qkv = x @ params[f"blk{i}.qkv.w"] + params[f"blk{i}.qkv.b"]

    def split(j):
        part = T.slice_axis(qkv, 2, j * c, (j + 1) * c)
        return T.transpose(T.reshape(part, (b, pn, heads, hd)), (0, 2, 1, 3))

    q, k, v = split(0), split(1), split(2)
    logits = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(hd))
    probs = T.softmax(logits, axis=-1)          # (B, heads, P, P)
    mixed = T.transpose(T.matmul(probs, v), (0, 2, 1, 3))
    out = T.reshape(mixed, (b, pn, c)) @ params[f"blk{i}.proj.w"] + params[f"blk{i}.proj.b"]
    return (out, probs) if return_probs else (out, None)


def transformer_block(params: ModelParams, i: int, x: Tensor, t_emb: Tensor,
                      return_probs: bool = False):
    """One attention + MLP block, both halves gated by the step embedding."""
    b, c = x.shape[0], params.cfg.embed_dim
    mod = t_emb @ params[f"blk{i}.mod.w"] + params[f"blk{i}.mod.b"]
    s_msa, c_msa, g_msa, s_mlp, c_mlp, g_mlp = _six_way(mod, b, c)
    attn, probs = _attention(params, i, _modulate(x, s_msa, c_msa), return_probs)
    x = x + g_msa * attn
    h = _modulate(x, s_mlp, c_mlp)
    h = T.gelu(h @ params[f"blk{i}.mlp.w1"] + params[f"blk{i}.mlp.b1"])
    h = h @ params[f"blk{i}.mlp.w2"] + params[f"blk{i}.mlp.b2"]
    return x + g_mlp * h, probs


def _head(params: ModelParams, h: Tensor, t_emb: Tensor) -> Tensor:
    """Final adaptive norm + linear head, tokens (B,P,C) -> clip (B,3,T,H,W)."""
    b, c = h.shape[0], params.cfg.embed_dim
    hm = t_emb @ params["head.mod.w"] + params["head.mod.b"]
    shift = T.reshape(T.slice_axis(hm, 1, 0, c), (b, 1, c))
    scale = T.reshape(T.slice_axis(hm, 1, c, 2 * c), (b, 1, c))
    out_tok = _modulate(h, shift, scale) @ params["head.w"] + params["head.b"]
    return _unpatchify(out_tok, params.cfg)


def patch_partition(params: ModelParams, x: np.ndarray) -> Tensor:
    """Single stacked clip (6,T,H,W) -> (P, embed_dim) tokens, positions added."""
    cfg = params.cfg
    if x.shape != (COND_CHANNELS, cfg.frames, cfg.height, cfg.width):
        raise ShapeError(f"patch_partition got {x.shape}, model expects "
                         f"({COND_CHANNELS},{cfg.frames},{cfg.height},{cfg.width})")
    dt = params["embed.w"].data.dtype
    tok = Tensor(patchify(x[None].astype(dt, copy=False), cfg), dtype=dt)
    h = tok @ params["embed.w"] + params["embed.b"] + params["pos"]
    return T.reshape(h, (cfg.num_patches, cfg.embed_dim))


def head_to_noise(params: ModelParams, tokens, t_emb: Tensor) -> Tensor:
    """Single token sequence (P, embed_dim) -> noise clip (3,T,H,W)."""
    cfg = params.cfg
    tokens = T.as_tensor(tokens)
    if tokens.shape != (cfg.num_patches, cfg.embed_dim):
        raise ShapeError(f"token shape {tokens.shape} != "
                         f"({cfg.num_patches},{cfg.embed_dim})")
    out = _head(params, T.reshape(tokens, (1,) + tokens.shape), t_emb)
    return T.reshape(out, out.shape[1:])


def predict_noise_batch(params: ModelParams, x: np.ndarray, cond: np.ndarray,
                        ts: np.ndarray, return_probs: bool = False):
    """Noise estimate for a batch; returns a Tensor tied into the autodiff graph.

    x, cond: (B, 3, T, H, W) matching the configured geometry; ts: (B,) ints.
    With return_probs=True also returns the per-block attention maps.
    """
    cfg = params.cfg
    expect = (OUT_CHANNELS, cfg.frames, cfg.height, cfg.width)
    if x.ndim != 5 or x.shape[1:] != expect:
        raise ShapeError(f"state shape {x.shape} incompatible with {expect}")
    if cond.shape != x.shape:
        raise ShapeError(f"condition shape {cond.shape} != state shape {x.shape}")
    if len(np.asarray(ts)) != x.shape[0]:
        raise ShapeError(f"{len(np.asarray(ts))} step indices for batch {x.shape[0]}")

    dt = params["embed.w"].data.dtype
    xin = np.concatenate([x, cond], axis=1).astype(dt, copy=False)
    tok = Tensor(patchify(xin, cfg), dtype=dt)
    h = tok @ params["embed.w"] + params["embed.b"]
    h = h + params["pos"]
    t_emb = time_embedding(params, ts)

    all_probs = []
    for i in range(cfg.depth):
        h, probs = transformer_block(params, i, h, t_emb, return_probs)
        if return_probs:
            all_probs.append(probs)

    out = _head(params, h, t_emb)
    return (out, all_probs) if return_probs else out


def predict_noise(params: ModelParams, x_t: Clip, cond: Clip, t: int) -> Clip:
    """Single-clip noise estimate, detached from the graph."""
    with T.no_grad():
        out = predict_noise_batch(params, x_t.data[None], cond.data[None],
                                  np.array([t]))
    return Clip(out.data[0].astype(np.float32, copy=False), "noise")
