"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, assert_finite


@dataclass
class AdamState:
    """Moment buffers and step counter; one buffer pair per parameter name."""

    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: Dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.first_moment:
                self.first_moment[name] = np.zeros_like(p.data)
                self.second_moment[name] = np.zeros_like(p.data)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on params.

    Parameters without a gradient entry are left untouched (their moments do
    not decay either; they are simply not part of this step).
    """
    state.ensure(params)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"adam grad shape {g.shape} != param {p.data.shape} for {name}")
        assert_finite(g, f"gradient of {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


def collect_grads(params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: p.grad for name, p in params.items() if p.grad is not None}


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
