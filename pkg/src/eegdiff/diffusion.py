"""Noise schedule, forward corruption process, and deterministic DDIM sampling.

The forward process mixes clean data with Gaussian noise,
``z_t = sqrt(abar_t) * z + sqrt(1 - abar_t) * eps``, under a linear beta
schedule. Sampling integrates a noise-prediction function backward over an
evenly spaced timestep subsequence with the eta=0 DDIM update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alphabar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a 1D array of length >= 1")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("beta values must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        object.__setattr__(self, "alphabar", np.cumprod(1.0 - beta))

    @property
    def T(self) -> int:
        return self.beta.size

    def abar(self, t) -> np.ndarray | float:
        """alphabar at 1-based step t; t=0 maps to the clean-data limit 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"step index out of range [0, {self.T}]")
        padded = np.concatenate([[1.0], self.alphabar])
        out = padded[t]
        return float(out) if out.ndim == 0 else out


def build_linear_schedule(T: int, beta_start: float = 1e-4,
                          beta_end: float = 2e-2) -> NoiseSchedule:
    """Linearly interpolated betas, endpoints inclusive."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def forward_diffuse(z: np.ndarray, t, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noisy latent at step t. Supports a per-item t vector on batched input."""
    z = np.asarray(z)
    eps = np.asarray(eps)
    if z.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != latent shape {z.shape}")
    ab = schedule.abar(t)
    if np.ndim(ab) > 0:
        ab = np.asarray(ab).reshape((-1,) + (1,) * (z.ndim - 1))
    return (np.sqrt(ab) * z + np.sqrt(1.0 - ab) * eps).astype(z.dtype, copy=False)


def ddim_step(z_t: np.ndarray, eps_pred: np.ndarray, t: int, t_prev: int,
              schedule: NoiseSchedule, eta: float = 0.0) -> np.ndarray:
    """Deterministic DDIM update from step t to t_prev (t_prev=0 returns z0-hat)."""
    if eta != 0.0:
        raise NotImplementedError("only deterministic DDIM (eta=0) is supported")
    if t_prev == t:
        return z_t
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"invalid step ordering t={t}, t_prev={t_prev}")
    ab_t = schedule.abar(t)
    ab_p = schedule.abar(t_prev)
    z0 = (z_t - np.sqrt(1.0 - ab_t) * eps_pred) / np.sqrt(ab_t)
    if t_prev == 0:
        return z0.astype(z_t.dtype, copy=False)
    out = np.sqrt(ab_p) * z0 + np.sqrt(1.0 - ab_p) * eps_pred
    return out.astype(z_t.dtype, copy=False)


def timestep_subsequence(T: int, num_steps: int) -> list[int]:
    """Evenly spaced steps from T down to 0, rounded down, duplicates removed."""
    if not (1 <= num_steps <= T):
        raise ValueError(f"num_steps must be in [1, {T}]")
    ts = np.floor(np.linspace(T, 0, num_steps + 1)).astype(int)
    seq = sorted(set(ts.tolist()), reverse=True)
    return seq


def sample(denoise_fn, schedule: NoiseSchedule, num_steps: int,
           latent_shape: tuple[int, ...], seed: int,
           conditioning=None, dtype=np.float32) -> np.ndarray:
    """Integrate the denoiser from pure noise down to a clean latent.

    ``denoise_fn(z_t, t)`` (or ``(z_t, t, conditioning)``) must return a
    noise prediction of z_t's shape. Bit-reproducible given the seed.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(latent_shape).astype(dtype)
    steps = timestep_subsequence(schedule.T, num_steps)  # ends at 0
    for t, t_prev in zip(steps[:-1], steps[1:]):
        eps = denoise_fn(z, t) if conditioning is None else denoise_fn(z, t, conditioning)
        eps = np.asarray(eps)
        if eps.shape != z.shape:
            raise ValueError(f"denoise_fn returned {eps.shape}, expected {z.shape}")
        z = ddim_step(z, eps, t, t_prev, schedule)
    return z
