"""Central finite-difference gradient oracle, independent of the autodiff path.

Evaluates a scalar-valued function built from plain parameter arrays twice per
entry (x +/- h) and compares the centered difference against autodiff grads.
"""

from __future__ import annotations

import numpy as np

from retracewm.numcore import Tensor, zero_grad


def finite_diff_grads(fn, arrays: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """d fn / d arrays[k] by central differences. fn maps dict of ndarrays -> float."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(arrays)
            flat[i] = orig - h
            down = fn(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def autodiff_grads(build, arrays: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    """Run build on Tensor-wrapped params, backward once, return value and grads."""
    params = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    out = build(params)
    out.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in params.items()}
    zero_grad(params.values())
    return out.item(), grads


def max_rel_error(fd: dict[str, np.ndarray], ad: dict[str, np.ndarray],
                  floor: float = 1e-6) -> float:
    worst = 0.0
    for name in fd:
        denom = np.maximum(np.abs(fd[name]), floor)
        worst = max(worst, float(np.max(np.abs(fd[name] - ad[name]) / denom)))
    return worst
