"""Dense float tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed, float32 by default ("use_dtype" switches to float64
for gradient verification, where h=1e-3 central differences would otherwise
drown in float32 rounding). Accumulation order is whatever numpy's pairwise
reductions produce, which is fixed for a given build and thread setting, so
repeated runs are bit-identical.

Each op returns a new Tensor holding closures that push the output gradient
to its parents. ``backward`` walks the graph once in reverse topological
order and then drops the graph edges; a second backward through the same
nodes is a usage error.
"""

from __future__ import annotations

import contextlib
import struct
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (sampling and other pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fns: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, parents: Sequence[Tensor], grad_fns: Sequence) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        keep, fns = [], []
        for p, f in zip(parents, grad_fns):
            if p.requires_grad:
                keep.append(p)
                fns.append(f)
        out._parents = tuple(keep)
        out._grad_fns = tuple(fns)
    else:
        out._parents = ()
        out._grad_fns = ()
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), (lambda g: g * (2.0 * a.data),))


def gelu(a) -> Tensor:
    """GELU, tanh approximation (0.5x(1+tanh(sqrt(2/pi)(x+0.044715x^3))))."""
    a = as_tensor(a)
    x = a.data
    c = np.asarray(0.7978845608028654, dtype=x.dtype)
    k = np.asarray(0.044715, dtype=x.dtype)
    u = c * (x + k * x * x * x)
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def grad_fn(g):
        du = c * (1.0 + 3.0 * k * x * x)
        return g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)

    return _make(out, (a,), (grad_fn,))


# ------------------------------------------------------------------- shaping


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), (lambda g: g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), (lambda g: g.transpose(inv),))


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return _make(out, ts, tuple(make_fn(i) for i in range(len(ts))))


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return _make(a.data[sl], (a,), (grad_fn,))


# ---------------------------------------------------------------- reductions


def sum_t(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape).astype(a.data.dtype, copy=True)

    return _make(out, (a,), (grad_fn,))


def mean_t(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_t(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dimensions broadcast like numpy matmul."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape),
        lambda g: _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape),
    ))


def conv3d(x, kernels) -> Tensor:
    """Non-overlapping 3-d convolution, stride equal to the kernel size.

    x: (C, T, H, W); kernels: (C_out, C, ts, sh, sw). Each output location is
    the inner product of one kernel with one disjoint patch, so the whole op
    reduces to a patch reshape followed by a matmul.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 4 or kernels.ndim != 5:
        raise ShapeError(f"conv3d expects x(C,T,H,W), k(Co,C,ts,sh,sw); got {x.shape}, {kernels.shape}")
    c, t, h, w = x.shape
    co, ci, ts, sh, sw = kernels.shape
    if ci != c:
        raise ShapeError(f"conv3d channel mismatch: input {c}, kernels {ci}")
    if t % ts or h % sh or w % sw:
        raise ShapeError(f"conv3d geometry ({t},{h},{w}) not divisible by kernel ({ts},{sh},{sw})")
    tt, hh, ww = t // ts, h // sh, w // sw
    patches = reshape(x, (c, tt, ts, hh, sh, ww, sw))
    patches = transpose(patches, (1, 3, 5, 0, 2, 4, 6))  # time-major, rows, cols
    patches = reshape(patches, (tt * hh * ww, c * ts * sh * sw))
    kmat = transpose(reshape(kernels, (co, c * ts * sh * sw)), (1, 0))
    out = matmul(patches, kmat)  # (P, C_out)
    return reshape(transpose(out, (1, 0)), (co, tt, hh, ww))


# ------------------------------------------------------------- normalization


def layer_norm(x, eps: float = 1e-6) -> Tensor:
    """Zero mean, unit variance over the last dimension; no learned affine."""
    x = as_tensor(x)
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm needs last dim >= 2, got {x.shape}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=d.dtype))
    y = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gym)

    return _make(y, (x,), (grad_fn,))


def softmax(x, axis: int = -1) -> Tensor:
    """Rows sum to 1; stabilized by max subtraction so huge logits stay finite."""
    x = as_tensor(x)
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    e = np.exp(d - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _make(y, (x,), (grad_fn,))


# ------------------------------------------------------------------ backward


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss.

    The loss must be scalar. The traversed graph is consumed: edge closures
    are dropped so node arrays can be collected.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological order (graphs can be a few thousand nodes deep)
    order: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:  # leaf
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, fn in zip(node._parents, node._grad_fns):
            contrib = fn(g)
            acc = grads.get(id(p))
            grads[id(p)] = contrib if acc is None else acc + contrib
        node._parents = ()
        node._grad_fns = ()


def assert_finite(arr: np.ndarray, what: str) -> None:
    from .errors import NumericsError

    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


# ----------------------------------------------------------------- dump file


def dump_tensor(arr, path) -> None:
    """Debug dump: ASCII header "shape d0 d1 ...", then little-endian f32."""
    data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    data = np.ascontiguousarray(data, dtype=np.float32)
    with open(path, "wb") as f:
        header = "shape " + " ".join(str(d) for d in data.shape) + "\n"
        f.write(header.encode("ascii"))
        f.write(data.astype("<f4").tobytes())


def load_dump(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = b""
        while not header.endswith(b"\n"):
            ch = f.read(1)
            if not ch:
                raise ShapeError(f"truncated dump header in {path}")
            header += ch
        parts = header.decode("ascii").split()
        if not parts or parts[0] != "shape":
            raise ShapeError(f"bad dump header in {path}: {header!r}")
        shape = tuple(int(p) for p in parts[1:])
        count = int(np.prod(shape)) if shape else 1
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise ShapeError(f"truncated dump payload in {path}")
        flat = np.frombuffer(raw, dtype="<f4")
        return flat.reshape(shape).astype(np.float32)
