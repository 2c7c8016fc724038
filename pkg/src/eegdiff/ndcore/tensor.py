"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and records the operation that produced it.
Calling ``backward`` on a result walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that requires
them. Frozen parameters participate in forward compute but are excluded from
the tape by ``requires_grad=False``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference-mode forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basics ------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, upstream: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor. ``upstream`` defaults to ones."""
        if upstream is None:
            upstream = np.ones(self.shape, dtype=self.dtype)
        upstream = np.asarray(upstream, dtype=self.dtype)
        if upstream.shape != self.shape:
            raise ValueError(f"upstream gradient shape {upstream.shape} != {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(upstream)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        data = a.data + np.asarray(b, dtype=a.dtype)

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.shape))

        return _node(data, (a,), bwd)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        bval = np.asarray(b, dtype=a.dtype)
        data = a.data * bval

        def bwd(g):
            a._accumulate(_unbroadcast(g * bval, a.shape))

        return _node(data, (a,), bwd)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bwd)


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**p

    def bwd(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _node(data, (a,), bwd)


def texp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * data)

    return _node(data, (a,), bwd)


def tlog(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def bwd(g):
        a._accumulate(g / a.data)

    return _node(data, (a,), bwd)


def tsqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def bwd(g):
        a._accumulate(g * 0.5 / data)

    return _node(data, (a,), bwd)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid_stable(a.data)

    def bwd(g):
        a._accumulate(g * data * (1.0 - data))

    return _node(data, (a,), bwd)


def silu(a: Tensor) -> Tensor:
    """Sigmoid-weighted linear unit, x * sigmoid(x)."""
    a = as_tensor(a)
    s = _sigmoid_stable(a.data)
    data = a.data * s

    def bwd(g):
        a._accumulate(g * (s * (1.0 + a.data * (1.0 - s))))

    return _node(data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def bwd(g):
        a._accumulate(g * _sigmoid_stable(a.data))

    return _node(data, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with pass-through-zero subgradient outside the bounds."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        a._accumulate(g * mask)

    return _node(data, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            ga = np.broadcast_to(g, a.shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.ndim for ax in axes)
            if not keepdims:
                g = np.expand_dims(g, axes)
            ga = np.broadcast_to(g, a.shape)
        a._accumulate(ga.astype(a.dtype, copy=False))

    return _node(np.asarray(data), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.shape))

    return _node(data, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bwd(g):
        a._accumulate(np.ascontiguousarray(g.transpose(inv)))

    return _node(data, (a,), bwd)


def take(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate(ga)

    return _node(np.ascontiguousarray(data), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(sl)]))

    return _node(data, tensors, bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2D operands only")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# convolutions and resampling (kernel-backed)


def conv1d(x: Tensor, w: Tensor, stride: int) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    data = kernels.conv1d_forward(x.data, w.data, stride)

    def bwd(g):
        gx, gw = kernels.conv1d_backward(g, x.data, w.data, stride)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)

    return _node(data, (x, w), bwd)


def conv2d(x: Tensor, w: Tensor, stride: tuple[int, int]) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    data = kernels.conv2d_forward(x.data, w.data, stride)

    def bwd(g):
        gx, gw = kernels.conv2d_backward(g, x.data, w.data, stride)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)

    return _node(data, (x, w), bwd)


def upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    data = kernels.upsample_nearest_forward(x.data, size)

    def bwd(g):
        x._accumulate(kernels.upsample_nearest_backward(g, x.shape))

    return _node(data, (x,), bwd)


# ---------------------------------------------------------------------------
# group normalization (fused op; composing it from primitives would put ~10
# nodes per call on the tape)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, C = x.shape[0], x.shape[1]
    if C % groups:
        raise ValueError(f"channels {C} not divisible by groups {groups}")
    spatial = x.shape[2:]
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    cshape = (1, C) + (1,) * len(spatial)
    data = xhat * gamma.data.reshape(cshape) + beta.data.reshape(cshape)

    def bwd(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0,) + tuple(range(2, g.ndim))))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0,) + tuple(range(2, g.ndim))))
        if x.requires_grad:
            dxhat = (g * gamma.data.reshape(cshape)).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            gx = (dxhat - m1 - xh * m2) * inv
            x._accumulate(gx.reshape(x.shape).astype(x.dtype, copy=False))

    return _node(data, (x, gamma, beta), bwd)


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr
