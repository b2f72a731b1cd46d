"""Binary run checkpoints.

Layout (all integers little-endian):

    magic "NRCK" | u32 version
    u32 config-text length | UTF-8 config text
    u32 timesteps | f64 beta_start | f64 beta_end
    u64 global step
    tensor group: teacher
    tensor group: student
    f64 lr | f64 beta1 | f64 beta2 | f64 eps | u64 adam step
    tensor group: adam first moments
    tensor group: adam second moments

A tensor group is a u32 count followed by name-sorted records of
u16 name-length, name, u8 ndim, u32 dims, then the raw float32 payload.
No compression, so round trips are bit-exact and a reader in any language
is a page of code. Writes go to a temp file in the same directory and are
renamed into place, so a crash never leaves a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, parse_config
from .errors import ConfigError, DataError
from .model import ModelParams, init_params
from .optim import AdamState
from .selftrain import TeacherStudent
from .tensor import Tensor

MAGIC = b"NRCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: Config
    step: int
    ts: TeacherStudent
    adam: AdamState


# --------------------------------------------------------------- serializing


def _pack_group(out: bytearray, arrays: dict) -> None:
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        nb = name.encode()
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", a.ndim)
        for dim in a.shape:
            out += struct.pack("<I", dim)
        out += a.tobytes()


def _encode(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    text = cfg.to_text().encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(text))
    out += text
    out += struct.pack("<Idd", cfg.timesteps, cfg.beta_start, cfg.beta_end)
    out += struct.pack("<Q", ckpt.step)
    _pack_group(out, {k: v.data for k, v in ckpt.ts.teacher.tensors.items()})
    _pack_group(out, {k: v.data for k, v in ckpt.ts.student.tensors.items()})
    adam = ckpt.adam
    out += struct.pack("<ddddQ", adam.lr, adam.beta1, adam.beta2, adam.eps,
                       adam.step_count)
    _pack_group(out, adam.first_moment)
    _pack_group(out, adam.second_moment)
    return bytes(out)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(_encode(ckpt))
    os.replace(tmp, path)


# ------------------------------------------------------------- deserializing


class _Reader:
    def __init__(self, buf: bytes, origin: str):
        self.buf, self.pos, self.origin = buf, 0, origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"truncated checkpoint: {self.origin}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _unpack_group(r: _Reader) -> dict:
    arrays = {}
    for _ in range(r.unpack("<I")):
        name = r.take(r.unpack("<H")).decode()
        ndim = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * count)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return arrays


def _as_params(cfg, arrays: dict, requires_grad: bool) -> ModelParams:
    tensors = {k: Tensor(v, requires_grad=requires_grad, dtype=np.float32)
               for k, v in arrays.items()}
    return ModelParams(cfg, tensors)


def load_checkpoint(path, expect: Config | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != MAGIC:
        raise DataError(f"not a checkpoint file (bad magic): {path}")
    version = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}: {path}")
    cfg = parse_config(r.take(r.unpack("<I")).decode())
    timesteps, beta_start, beta_end = r.unpack("<Idd")
    if (timesteps, beta_start, beta_end) != (cfg.timesteps, cfg.beta_start,
                                             cfg.beta_end):
        raise DataError(f"schedule record disagrees with embedded config: {path}")
    step = r.unpack("<Q")
    teacher_arrays = _unpack_group(r)
    student_arrays = _unpack_group(r)
    lr, beta1, beta2, eps, adam_step = r.unpack("<ddddQ")
    adam = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                     step_count=adam_step,
                     first_moment=_unpack_group(r),
                     second_moment=_unpack_group(r))
    if not r.done():
        raise DataError(f"trailing bytes after checkpoint payload: {path}")

    if expect is not None:
        ours = (expect.model_config(), expect.timesteps, expect.beta_start,
                expect.beta_end)
        theirs = (cfg.model_config(), cfg.timesteps, cfg.beta_start,
                  cfg.beta_end)
        if ours != theirs:
            raise ConfigError(
                f"checkpoint {path} was written for a different model or "
                "schedule geometry than the active config")

    mc = cfg.model_config()
    expected = {k: v.shape for k, v in init_params(mc, seed=0).tensors.items()}
    for label, arrays in (("teacher", teacher_arrays), ("student", student_arrays)):
        got = {k: v.shape for k, v in arrays.items()}
        if got != expected:
            raise DataError(
                f"{label} tensors in {path} do not match the embedded "
                "config's parameter signature")
    for name, m in adam.first_moment.items():
        v = adam.second_moment.get(name)
        if name not in expected or v is None or m.shape != expected[name] \
                or v.shape != expected[name]:
            raise DataError(f"adam moment {name!r} inconsistent in {path}")

    ts = TeacherStudent(teacher=_as_params(mc, teacher_arrays, False),
                        student=_as_params(mc, student_arrays, True),
                        ema_decay=cfg.ema_decay)
    return Checkpoint(config=cfg, step=step, ts=ts, adam=adam)
