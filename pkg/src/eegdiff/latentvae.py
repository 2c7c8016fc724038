"""Stochastic encoder/decoder between spectrogram grids and latents.

Two interchangeable variants sit behind one interface:

* ``AnalyticPatchVae`` — non-learned patchify with a fixed orthogonal
  projection. When the latent channel count equals the patch area the map is
  an exact bijection, which lets diffusion correctness be tested without any
  VAE training.
* ``ConvVae`` — a small trained convolutional VAE with two downsampling
  stages.

Grid layout at this interface is (freq_bins, time_bins); latents are
(F_z, S_z, D_z). Batched network-facing helpers use channels-first arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import Conv2d, GroupNorm, Module, SiLU
from .ndcore import tensor as T
from .ndcore.kernels import conv_out_length
from .ndcore.tensor import Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class PosteriorStats:
    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ValueError("mean/logvar shape mismatch")
        object.__setattr__(self, "logvar",
                           np.clip(self.logvar, LOGVAR_MIN, LOGVAR_MAX))

    def sample(self, seed: int) -> np.ndarray:
        eta = np.random.default_rng(seed).standard_normal(self.mean.shape)
        out = self.mean + np.exp(0.5 * self.logvar) * eta
        return out.astype(self.mean.dtype, copy=False)


def kl_standard_normal(mean: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mean, exp(logvar)) || N(0, 1)) summed over all dims."""
    return float(0.5 * np.sum(mean**2 + np.exp(logvar) - logvar - 1.0))


def latent_to_cf(z: np.ndarray) -> np.ndarray:
    """(F_z, S_z, D_z) or batched -> channels-first (D_z, F_z, S_z)."""
    if z.ndim == 3:
        return np.ascontiguousarray(z.transpose(2, 0, 1))
    return np.ascontiguousarray(z.transpose(0, 3, 1, 2))


def latent_from_cf(z: np.ndarray) -> np.ndarray:
    if z.ndim == 3:
        return np.ascontiguousarray(z.transpose(1, 2, 0))
    return np.ascontiguousarray(z.transpose(0, 2, 3, 1))


class AnalyticPatchVae:
    """Fixed orthogonal patch projection; exactly invertible when d_z == patch area."""

    def __init__(self, freq_bins: int, time_bins: int, patch: tuple[int, int],
                 d_z: int, seed: int = 0, logvar_const: float = LOGVAR_MIN):
        ph, pw = patch
        if freq_bins % ph or time_bins % pw:
            raise ValueError(f"grid ({freq_bins}, {time_bins}) not divisible by patch {patch}")
        area = ph * pw
        if d_z > area:
            raise ValueError(f"d_z={d_z} exceeds patch area {area}")
        self.freq_bins, self.time_bins = freq_bins, time_bins
        self.patch = (ph, pw)
        self.d_z = d_z
        self.f_z, self.s_z = freq_bins // ph, time_bins // pw
        self.logvar_const = float(np.clip(logvar_const, LOGVAR_MIN, LOGVAR_MAX))
        gauss = np.random.default_rng(seed).standard_normal((area, area))
        q, _ = np.linalg.qr(gauss)
        self.proj = q[:d_z].astype(np.float32)  # rows orthonormal

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.f_z, self.s_z, self.d_z)

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-2:] != (self.freq_bins, self.time_bins):
            raise ValueError(f"grid shape {x.shape[-2:]} != "
                             f"({self.freq_bins}, {self.time_bins})")

    def _patches(self, x: np.ndarray) -> np.ndarray:
        ph, pw = self.patch
        lead = x.shape[:-2]
        x = x.reshape(lead + (self.f_z, ph, self.s_z, pw))
        order = tuple(range(len(lead))) + tuple(
            len(lead) + i for i in (0, 2, 1, 3))
        return x.transpose(order).reshape(lead + (self.f_z, self.s_z, ph * pw))

    def _unpatch(self, p: np.ndarray) -> np.ndarray:
        ph, pw = self.patch
        lead = p.shape[:-3]
        p = p.reshape(lead + (self.f_z, self.s_z, ph, pw))
        order = tuple(range(len(lead))) + tuple(
            len(lead) + i for i in (0, 2, 1, 3))
        return p.transpose(order).reshape(lead + (self.freq_bins, self.time_bins))

    def encode_mean(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return (self._patches(np.asarray(x, dtype=np.float32)) @ self.proj.T)

    def encode(self, x: np.ndarray, seed: int) -> tuple[PosteriorStats, np.ndarray]:
        mean = self.encode_mean(x)
        stats = PosteriorStats(mean, np.full_like(mean, self.logvar_const))
        return stats, stats.sample(seed)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.shape[-3:] != self.latent_shape:
            raise ValueError(f"latent shape {z.shape[-3:]} != {self.latent_shape}")
        return self._unpatch(z @ self.proj)

    # batched channels-first helpers for the diffusion stack
    def encode_mean_cf(self, x: np.ndarray) -> np.ndarray:
        return latent_to_cf(self.encode_mean(x))

    def decode_cf(self, z_cf: np.ndarray) -> np.ndarray:
        return self.decode(latent_from_cf(z_cf))


class ConvVae(Module):
    """Two-stage strided conv VAE. Channels-first internally, grids at the API."""

    def __init__(self, freq_bins: int, time_bins: int, d_z: int = 4,
                 channels: tuple[int, int] = (16, 32), seed: int = 0):
        rng = np.random.default_rng(seed)
        c1, c2 = channels
        self.freq_bins, self.time_bins = freq_bins, time_bins
        self.d_z = d_z
        self.f_z = conv_out_length(conv_out_length(freq_bins, 2), 2)
        self.s_z = conv_out_length(conv_out_length(time_bins, 2), 2)
        self._mid = (conv_out_length(freq_bins, 2), conv_out_length(time_bins, 2))

        self.enc1 = Conv2d(1, c1, 3, 2, rng)
        self.en1 = GroupNorm(c1)
        self.enc2 = Conv2d(c1, c2, 3, 2, rng)
        self.en2 = GroupNorm(c2)
        self.mu_head = Conv2d(c2, d_z, 3, 1, rng)
        self.lv_head = Conv2d(c2, d_z, 3, 1, rng)

        self.dec1 = Conv2d(d_z, c2, 3, 1, rng)
        self.dn1 = GroupNorm(c2)
        self.dec2 = Conv2d(c2, c1, 3, 1, rng)
        self.dn2 = GroupNorm(c1)
        self.out = Conv2d(c1, 1, 3, 1, rng)
        self.act = SiLU()

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.f_z, self.s_z, self.d_z)

    def forward_stats(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """x (B, 1, F, S) -> (mu, logvar), each (B, D_z, F_z, S_z)."""
        h = self.act(self.en1(self.enc1(x)))
        h = self.act(self.en2(self.enc2(h)))
        return self.mu_head(h), T.clip(self.lv_head(h), LOGVAR_MIN, LOGVAR_MAX)

    def decode_t(self, z: Tensor) -> Tensor:
        h = self.act(self.dn1(self.dec1(z)))
        h = T.upsample_nearest(h, self._mid)
        h = self.act(self.dn2(self.dec2(h)))
        h = T.upsample_nearest(h, (self.freq_bins, self.time_bins))
        return self.out(h)

    # -- numpy single-grid interface ----------------------------------------

    def encode_mean(self, x: np.ndarray) -> np.ndarray:
        mu, _ = self.forward_stats(Tensor(x[None, None].astype(np.float32)))
        return latent_from_cf(mu.data[0])

    def encode(self, x: np.ndarray, seed: int) -> tuple[PosteriorStats, np.ndarray]:
        mu, lv = self.forward_stats(Tensor(x[None, None].astype(np.float32)))
        stats = PosteriorStats(latent_from_cf(mu.data[0]), latent_from_cf(lv.data[0]))
        return stats, stats.sample(seed)

    def decode(self, z: np.ndarray) -> np.ndarray:
        out = self.decode_t(Tensor(latent_to_cf(z.astype(np.float32))[None]))
        return out.data[0, 0]

    def encode_mean_cf(self, x: np.ndarray) -> np.ndarray:
        """Batched (B, F, S) -> (B, D_z, F_z, S_z)."""
        mu, _ = self.forward_stats(Tensor(x[:, None].astype(np.float32)))
        return mu.data

    def decode_cf(self, z_cf: np.ndarray) -> np.ndarray:
        if z_cf.ndim == 3:
            return self.decode_t(Tensor(z_cf[None].astype(np.float32))).data[0, 0]
        return self.decode_t(Tensor(z_cf.astype(np.float32))).data[:, 0]


def vae_loss(vae: ConvVae, x_batch: np.ndarray, seed: int,
             beta_kl: float = 1e-3) -> Tensor:
    """Reconstruction MSE plus beta-weighted KL to the standard normal.

    Differentiable in the VAE parameters; KL is averaged over the batch.
    """
    if x_batch.ndim != 3 or x_batch.shape[0] == 0:
        raise ValueError("expected a non-empty (B, F, S) batch")
    x = Tensor(x_batch[:, None].astype(np.float32))
    mu, lv = vae.forward_stats(x)
    eta = np.random.default_rng(seed).standard_normal(mu.shape).astype(np.float32)
    z = mu + T.texp(lv * 0.5) * Tensor(eta)
    recon = vae.decode_t(z)
    mse = ((recon - x) ** 2.0).mean()
    kl = (mu**2.0 + T.texp(lv) - lv - 1.0).sum() * (0.5 / x_batch.shape[0])
    loss = mse + kl * beta_kl
    T.ensure_finite(loss.data, "vae loss")
    return loss


def fit_latent_scale(latents_cf: np.ndarray) -> float:
    """Global scalar bringing latent std to ~1 before diffusion training."""
    std = float(np.std(latents_cf))
    return 1.0 if std == 0.0 else 1.0 / std
