"""Adaptive-moment gradient optimizer over named parameter collections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NumericError
from .tensor import Tensor


@dataclass
class OptimizerState:
    """First/second moment buffers plus step counter for one parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 100.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a dict of named Tensors; updates params in place."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 100.0):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, clip_norm=clip_norm)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.params, {n: p.grad for n, p in self.params.items()}, self.state)


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
                   state: OptimizerState) -> None:
    """Apply one adaptive-moment update. Missing grads count as zero.

    Clips the global gradient norm at state.clip_norm before updating.
    """
    st = state
    st.step_count += 1
    t = st.step_count
    bc1 = 1.0 - st.beta1 ** t
    bc2 = 1.0 - st.beta2 ** t

    total_sq = 0.0
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ContractViolation(f"gradient shape {g.shape} != param '{name}' {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        total_sq += float(np.sum(g * g))
    scale = 1.0
    gnorm = float(np.sqrt(total_sq))
    if st.clip_norm > 0 and gnorm > st.clip_norm:
        scale = st.clip_norm / gnorm

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif scale != 1.0:
            g = g * scale
        m = st.m.get(name)
        v = st.v.get(name)
        if m is None or m.shape != p.data.shape:
            raise ContractViolation(f"moment buffer missing or mismatched for '{name}'")
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * (g * g)
        update = st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
        p.data -= update
