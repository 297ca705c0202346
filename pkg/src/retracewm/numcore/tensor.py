"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every primitive records its parents and a
backward closure; calling ``backward()`` on a scalar root walks the graph in
reverse topological order and accumulates ``grad`` buffers on every tensor
with ``requires_grad`` set. Gradients keep accumulating across multiple
backward calls until cleared with ``zero_grad``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit as _sigmoid

from ..errors import ContractViolation, NumericError

# Toggle for per-op finiteness checks. Cheap at desk scale; main() may disable
# it for profiling but the test suite assumes it is on.
CHECK_FINITE = True

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; all results behave like constants."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _finite(data: np.ndarray) -> bool:
    # single C reduction: any NaN/Inf makes the sum non-finite
    return math.isfinite(float(data.sum()))


def _check(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not _finite(data):
        raise NumericError(f"non-finite value produced by primitive '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _grad_fn=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if _op == "leaf":
            _check(arr, "leaf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._grad_fn = _grad_fn
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"

    def detach(self) -> "Tensor":
        """Return a view of the same data cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(param) into ``grad`` for all graph participants.

        The root must be a scalar (single element). Gradients add onto any
        existing ``grad`` buffers; call ``zero_grad`` between optimizer steps.
        """
        if self.data.size != 1:
            raise ContractViolation(f"backward() root must be scalar, got shape {self.shape}")

        # Reverse topological order via iterative post-order DFS; only nodes
        # that require grad can receive or propagate gradients.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if CHECK_FINITE and not _finite(g):
                raise NumericError(f"non-finite gradient at primitive '{node._op}'")
            if node.requires_grad:
                # g is an owned buffer popped from the dict; transfer it
                node.grad = g if node.grad is None else node.grad + g
            if node._grad_fn is not None:
                for parent, pg in node._grad_fn(g):
                    if not parent.requires_grad:
                        continue
                    buf = grads.get(id(parent))
                    if buf is None:
                        # Own a writable float64 buffer: pg may be a view, a
                        # numpy scalar (0-d results), or g itself, all of
                        # which would corrupt in-place accumulation.
                        if (not isinstance(pg, np.ndarray) or pg.base is not None
                                or pg is g or not pg.flags.writeable
                                or pg.dtype != np.float64):
                            pg = np.array(pg, dtype=np.float64)
                        grads[id(parent)] = pg
                    else:
                        buf += pg

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    _check(data, op)
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not req:
        grad_fn = None
        parents = ()
    return Tensor(data, requires_grad=req, _parents=parents, _grad_fn=grad_fn, _op=op)


# -- elementwise binary ops ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(out, "add", (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _make(out, "sub", (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(out, "mul", (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def grad_fn(g):
        return (
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return _make(out, "div", (a, b), grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return ((a, -g),)

    return _make(-a.data, "neg", (a,), grad_fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(out, "matmul", (a, b), grad_fn)


def affine(x, w, b) -> Tensor:
    """x @ w + b as one fused node, the standard dense layer."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2:
        raise ContractViolation(f"affine expects 2-D x and w, got {x.shape} @ {w.shape}")
    out = x.data @ w.data + b.data

    def grad_fn(g):
        return ((x, g @ w.data.T), (w, x.data.T @ g), (b, _unbroadcast(g, b.data.shape)))

    return _make(out, "affine", (x, w, b), grad_fn)


# -- elementwise unary ops ----------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def grad_fn(g):
        return ((a, g * (1.0 - out * out)),)

    return _make(out, "tanh", (a,), grad_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def grad_fn(g):
        return ((a, g * out * (1.0 - out)),)

    return _make(out, "sigmoid", (a,), grad_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def grad_fn(g):
        return ((a, g * (a.data > 0.0)),)

    return _make(out, "relu", (a,), grad_fn)


def elu(a) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0.0, a.data, np.expm1(a.data))

    def grad_fn(g):
        return ((a, g * np.where(a.data > 0.0, 1.0, out + 1.0)),)

    return _make(out, "elu", (a,), grad_fn)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def grad_fn(g):
        return ((a, g * _sigmoid(a.data)),)

    return _make(out, "softplus", (a,), grad_fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def grad_fn(g):
        return ((a, g * out),)

    return _make(out, "exp", (a,), grad_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def grad_fn(g):
        return ((a, g / a.data),)

    return _make(out, "log", (a,), grad_fn)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = np.abs(a.data)

    def grad_fn(g):
        return ((a, g * np.sign(a.data)),)

    return _make(out, "abs", (a,), grad_fn)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def grad_fn(g):
        return ((a, g * 2.0 * a.data),)

    return _make(out, "square", (a,), grad_fn)


# -- reductions and shape ops -------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.data.shape)),)

    return _make(out, "sum", (a,), grad_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else a.data.shape[axis]

    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.data.shape) / denom),)

    return _make(out, "mean", (a,), grad_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make(out, "reshape", (a,), grad_fn)


def take(a, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    out = a.data[idx]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return ((a, full),)

    return _make(np.ascontiguousarray(out), "slice", (a,), grad_fn)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            pieces.append((p, np.ascontiguousarray(g[tuple(sl)])))
        return tuple(pieces)

    return _make(out, "concat", parts, grad_fn)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    out = np.stack([p.data for p in parts], axis=axis)

    def grad_fn(g):
        slabs = np.moveaxis(g, axis, 0)
        return tuple((p, np.ascontiguousarray(slabs[i])) for i, p in enumerate(parts))

    return _make(out, "stack", parts, grad_fn)


def stop_gradient(a) -> Tensor:
    """Identity in the forward pass; blocks all gradient flow."""
    return as_tensor(a).detach()


# -- parameter helpers ---------------------------------------------------------


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))
