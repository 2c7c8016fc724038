"""Parameterized layers over the autodiff tensor engine."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor owned by a module. Frozen parameters never receive updates."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.trainable = trainable

    def freeze(self) -> None:
        self.trainable = False
        self.requires_grad = False
        self.grad = None

    def unfreeze(self) -> None:
        self.trainable = True
        self.requires_grad = True


class Module:
    """Base class: parameter discovery walks attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            path = f"{prefix}{name}" if prefix else name
            if isinstance(value, Parameter):
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{path}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{path}.{i}"] = item
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.named_parameters().values():
            p.freeze()

    def unfreeze(self) -> None:
        for p in self.named_parameters().values():
            p.unfreeze()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, scale: float, dtype) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, dtype=np.float32):
        scale = 1.0 / math.sqrt(din)
        self.weight = Parameter(_uniform(rng, (dout, din), scale, dtype))
        self.bias = Parameter(np.zeros(dout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.transpose(self.weight, (1, 0))) + self.bias


class Conv1d(Module):
    """Strided 1D convolution with same-ceil padding: L_out = ceil(L/stride)."""

    def __init__(self, cin: int, cout: int, kernel: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32, zero_init: bool = False):
        self.stride = stride
        if zero_init:
            self.weight = Parameter(np.zeros((cout, cin, kernel), dtype=dtype))
        else:
            scale = 1.0 / math.sqrt(cin * kernel)
            self.weight = Parameter(_uniform(rng, (cout, cin, kernel), scale, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv1d(x, self.weight, self.stride)
        return out + T.reshape(self.bias, (1, -1, 1))


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: tuple[int, int] | int,
                 rng: np.random.Generator, dtype=np.float32, zero_init: bool = False):
        self.stride = (stride, stride) if isinstance(stride, int) else tuple(stride)
        if zero_init:
            self.weight = Parameter(np.zeros((cout, cin, kernel, kernel), dtype=dtype))
        else:
            scale = 1.0 / math.sqrt(cin * kernel * kernel)
            self.weight = Parameter(_uniform(rng, (cout, cin, kernel, kernel), scale, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, self.stride)
        return out + T.reshape(self.bias, (1, -1, 1, 1))


class GroupNorm(Module):
    """Group normalization with group count min(8, channels)."""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5):
        self.groups = min(8, channels)
        while channels % self.groups:
            self.groups -= 1
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class SiLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.silu(x)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class Sequential(Module):
    def __init__(self, *modules: Module):
        self.items = list(modules)

    def forward(self, x: Tensor) -> Tensor:
        for m in self.items:
            x = m(x)
        return x


def evaluate(stack: Module, *inputs) -> Tensor:
    """Forward a layer stack; raises on non-finite output."""
    out = stack(*(T.as_tensor(x) for x in inputs))
    T.ensure_finite(out.data, f"output of {type(stack).__name__}")
    return out


def backpropagate(stack: Module, inputs, upstream=None) -> dict[str, np.ndarray]:
    """Run forward + backward, return gradients keyed by parameter path.

    Inputs are wrapped with requires_grad so the returned dict also carries
    an ``input.<i>`` gradient per input.
    """
    stack.zero_grad()
    wrapped = [T.Tensor(np.asarray(x), requires_grad=True) for x in
               (inputs if isinstance(inputs, (list, tuple)) else [inputs])]
    out = stack(*wrapped)
    out.backward(upstream)
    grads: dict[str, np.ndarray] = {}
    for name, p in stack.named_parameters().items():
        if p.trainable:
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    for i, w in enumerate(wrapped):
        grads[f"input.{i}"] = w.grad if w.grad is not None else np.zeros_like(w.data)
    return grads
