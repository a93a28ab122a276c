"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a NumPy array and records the operation that produced it;
backward() walks the implicit graph in reverse topological order and
accumulates gradients exactly once per node.  Everything is 64-bit: the
finite-difference checks this library is validated against are unreliable
in single precision.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteError, KinkError, RankError, ShapeError

DEBUG = False

_GRAD_ENABLED = True

# When not None, kink-sensitive ops (clip, relu, abs) append the distance of
# their inputs to the nearest kink.  Used by grad_check to reject sample
# points where finite differences straddle a non-smooth point.
_KINK_DISTANCES: Optional[list] = None


def set_debug(flag: bool) -> None:
    global DEBUG
    DEBUG = bool(flag)


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def track_kinks():
    global _KINK_DISTANCES
    prev = _KINK_DISTANCES
    _KINK_DISTANCES = []
    try:
        yield _KINK_DISTANCES
    finally:
        _KINK_DISTANCES = prev


def _note_kink(dist: np.ndarray) -> None:
    if _KINK_DISTANCES is not None and dist.size:
        _KINK_DISTANCES.append(float(np.min(dist)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if DEBUG and not np.all(np.isfinite(self.data)):
            raise NonFiniteError("non-finite values in tensor data")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[], None]] = None
        self._parents: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # Operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def backward(self, retain_graph: bool = False):
        """Accumulate gradients of this scalar into every requires_grad tensor."""
        if self.data.size != 1:
            raise RankError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
            if not retain_graph:
                node._backward = None
                node._parents = ()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(data, parents: tuple, backward: Optional[Callable]) -> Tensor:
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Op catalog
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data + b.data, (a, b), None)

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,), None)
    out._backward = (lambda: _accum(a, -out.grad)) if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data * b.data, (a, b), None)

    def backward():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; `a` may carry leading batch dimensions, `b` is 2-D."""
    if b.data.ndim != 2 or a.data.ndim < 2:
        raise ShapeError(f"matmul expects (..., m, k) @ (k, n); got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, g @ b.data.T)
        a2 = a.data.reshape(-1, a.data.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        _accum(b, a2.T @ g2)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [t.data for t in tensors]
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        ref[axis] = other[axis] = -1
        if other != ref:
            raise ShapeError(
                f"concat shapes differ off axis {axis}: "
                f"{[tuple(q.shape) for q in parts]}"
            )
    out = _make(np.concatenate(parts, axis=axis), tuple(tensors), None)
    sizes = [p.shape[axis] for p in parts]

    def backward():
        splits = np.cumsum(sizes)[:-1]
        for t, g in zip(tensors, np.split(out.grad, splits, axis=axis)):
            _accum(t, g)

    out._backward = backward if out.requires_grad else None
    return out


def slice_(a: Tensor, key) -> Tensor:
    out = _make(a.data[key], (a,), None)

    def backward():
        g = np.zeros_like(a.data)
        g[key] += out.grad
        _accum(a, g)

    out._backward = backward if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad.reshape(a.data.shape)))
        if out.requires_grad
        else None
    )
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(s, (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad * s * (1.0 - s))) if out.requires_grad else None
    )
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = _make(t, (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad * (1.0 - t * t))) if out.requires_grad else None
    )
    return out


def relu(a: Tensor) -> Tensor:
    _note_kink(np.abs(a.data))
    out = _make(np.maximum(a.data, 0.0), (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad * (a.data > 0.0))) if out.requires_grad else None
    )
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    _note_kink(np.minimum(np.abs(a.data - lo), np.abs(a.data - hi)))
    out = _make(np.clip(a.data, lo, hi), (a,), None)

    def backward():
        inside = (a.data > lo) & (a.data < hi)
        _accum(a, out.grad * inside)

    out._backward = backward if out.requires_grad else None
    return out


def abs_(a: Tensor) -> Tensor:
    _note_kink(np.abs(a.data))
    out = _make(np.abs(a.data), (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad * np.sign(a.data))) if out.requires_grad else None
    )
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = _make(s, (a,), None)

    def backward():
        g = out.grad
        _accum(a, s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    out._backward = backward if out.requires_grad else None
    return out


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True with a constant (no grad there)."""
    out = _make(np.where(mask, value, a.data), (a,), None)
    out._backward = (
        (lambda: _accum(a, out.grad * ~mask)) if out.requires_grad else None
    )
    return out


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    out._backward = backward if out.requires_grad else None
    return out


def dropout(a: Tensor, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales by 1/(1-rate) at train time, identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = _make(a.data * keep, (a,), None)
    out._backward = (lambda: _accum(a, out.grad * keep)) if out.requires_grad else None
    return out


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over axis 0 of a (B, D) input.

    Training mode normalizes by batch statistics (population variance) and
    updates the running arrays in place; inference uses the running stats
    only, so outputs are independent of batch composition.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm expects (B, D), got {x.shape}")
    if train:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * inv_std
    out = _make(gamma.data * x_hat + beta.data, (x, gamma, beta), None)

    def backward():
        g = out.grad
        _accum(gamma, (g * x_hat).sum(axis=0))
        _accum(beta, g.sum(axis=0))
        if train:
            n = x.data.shape[0]
            gx = g * gamma.data
            _accum(
                x,
                inv_std
                * (gx - gx.mean(axis=0) - x_hat * (gx * x_hat).mean(axis=0)),
            )
        else:
            _accum(x, g * gamma.data * inv_std)

    out._backward = backward if out.requires_grad else None
    return out


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = _make(table.data[ids], (table,), None)

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        _accum(table, g)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    resample: Optional[Callable[[], None]] = None,
    max_tries: int = 10,
    floor: float = 1e-8,
) -> float:
    """Compare analytic gradients of scalar f() against central differences.

    Returns the maximum over all parameter coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, floor).  Sample points
    within h of a clip/relu/abs kink are rejected; `resample` (when given)
    re-randomizes the parameters for another try, otherwise KinkError.

    The default floor suits op-sized functions.  For larger compositions
    raise it: central differences quantize at ~ulp(|f|)/2h, so a gradient
    smaller than that is numerically unresolvable and any coordinate whose
    true gradient sits below the noise would otherwise dominate the report.
    """
    for attempt in range(max_tries):
        with track_kinks() as dists:
            loss = f()
        if dists and min(dists) < h:
            if resample is None or attempt == max_tries - 1:
                raise KinkError(
                    f"sample point within {h} of a kink after {attempt + 1} tries"
                )
            resample()
            continue
        break

    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    max_err = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(a_flat[i]), abs(numeric), floor)
            max_err = max(max_err, abs(a_flat[i] - numeric) / denom)
    return max_err
