"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .layers import Parameter


class MissingGradient(RuntimeError):
    pass


class Adam:
    """Standard Adam over a named parameter tree.

    Frozen (non-trainable) parameters are skipped entirely and stay
    bit-identical across any number of steps.
    """

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items() if p.trainable}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items() if p.trainable}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            if not p.trainable:
                continue
            if p.grad is None:
                raise MissingGradient(f"trainable parameter {name!r} has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adam_step(params: dict[str, Parameter], state: Adam) -> Adam:
    """Single functional-style step; returns the mutated state for chaining."""
    state.step()
    return state
