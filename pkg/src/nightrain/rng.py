"""Counter-based random number generation.

Every stochastic draw in the pipeline comes from ``CounterRng``, a splitmix64
generator addressed by (seed, stream, counter). Outputs depend only on those
three integers, never on call granularity or platform, so any step of a run
can be reproduced from the global seed alone. Gaussians use Box-Muller on
64-bit uniforms and are computed in float64 before casting.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = (x ^ (x >> _U64(30))) * _M1
    x = (x ^ (x >> _U64(27))) * _M2
    return x ^ (x >> _U64(31))


def derive_seed(*parts) -> int:
    """Collapse ints/strings into one 64-bit seed, stably across runs.

    Used to give every pipeline site (a training step, a sampler chain, a
    video id) its own independent seed from the single configured one.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(16, "little", signed=True))
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        else:
            raise TypeError(f"seed part must be int or str, got {type(p)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


class CounterRng:
    """Deterministic generator: output i is a pure function of (seed, stream, i)."""

    def __init__(self, seed: int, stream: int = 0):
        with np.errstate(over="ignore"):
            key = _mix(_U64(seed & 0xFFFFFFFFFFFFFFFF) * _GAMMA)
            key = _mix(key ^ _mix(_U64(stream & 0xFFFFFFFFFFFFFFFF) + _GAMMA))
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = key
        self._counter = 0

    def spawn(self, *parts) -> "CounterRng":
        """Child generator with an independent stream; does not advance self."""
        return CounterRng(derive_seed(self.seed, self.stream, *parts))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + (idx + _U64(1)) * _GAMMA)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms in (0, 1], float64. Never exactly 0, safe under log()."""
        n = int(np.prod(shape)) if shape else 1
        bits = self._raw(n)
        u = ((bits >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        """Standard normals via Box-Muller (two uniforms per pair)."""
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = self.uniform((half,))
        u2 = self.uniform((half,))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.empty(2 * half, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = z[:n].astype(dtype)
        return out.reshape(shape) if shape else out[0]

    def integers(self, bound: int, shape=()) -> np.ndarray:
        """Integers in [0, bound). Modulo bias is ~bound/2^64, ignored."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        n = int(np.prod(shape)) if shape else 1
        vals = (self._raw(n) % _U64(bound)).astype(np.int64)
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) via stable argsort of uniform keys."""
        return np.argsort(self.uniform((n,)), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        return self.permutation(n)[:k]
