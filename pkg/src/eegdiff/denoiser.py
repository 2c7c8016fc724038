"""Time-conditioned U-Net noise predictor with exposed per-level encoder features.

The network is encoder -> bottleneck -> decoder. Encoder levels halve the
spatial dims (save the first, which runs at input resolution); the decoder
consumes the bottleneck output plus every encoder feature as a skip. The
feature list is exposed so an adapter can fuse into it before decoding.
Latent layout is channels-first (B, D_z, F_z, S_z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import Conv2d, GroupNorm, Linear, Module, SiLU
from .ndcore import tensor as T
from .ndcore.tensor import Tensor


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 4
    level_channels: tuple[int, ...] = (32, 64, 128)
    time_dim: int = 64
    kernel: int = 3

    def __post_init__(self):
        if len(self.level_channels) < 2:
            raise ValueError("need at least 2 levels")
        if any(b <= a for a, b in zip(self.level_channels, self.level_channels[1:])):
            raise ValueError("channels must strictly increase with depth")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


def time_embed(t, dim: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding: sin/cos at geometric frequencies base^(-i/half)."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return emb.astype(np.float32)


class EncoderLevel(Module):
    """Strided conv + time injection + refinement conv."""

    def __init__(self, cin: int, cout: int, stride: int, time_dim: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.down = Conv2d(cin, cout, kernel, stride, rng, dtype=dtype)
        self.t_proj = Linear(time_dim, cout, rng, dtype=dtype)
        self.n1 = GroupNorm(cout, dtype=dtype)
        self.conv = Conv2d(cout, cout, kernel, 1, rng, dtype=dtype)
        self.n2 = GroupNorm(cout, dtype=dtype)

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.down(x)
        tb = self.t_proj(temb)
        h = h + T.reshape(tb, (tb.shape[0], tb.shape[1], 1, 1))
        h = T.silu(self.n1(h))
        return T.silu(self.n2(self.conv(h)))


class UNet(Module):
    def __init__(self, config: UNetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        cfg = config
        self.config = cfg
        td = cfg.time_dim
        self.t_in = Linear(td, td, rng, dtype=dtype)
        self.t_out = Linear(td, td, rng, dtype=dtype)
        chans = (cfg.in_channels,) + cfg.level_channels
        self.enc = [EncoderLevel(chans[i], chans[i + 1], 1 if i == 0 else 2,
                                 td, cfg.kernel, rng, dtype=dtype)
                    for i in range(len(cfg.level_channels))]
        cb = cfg.level_channels[-1]
        self.mid1 = Conv2d(cb, cb, cfg.kernel, 1, rng, dtype=dtype)
        self.midn = GroupNorm(cb, dtype=dtype)
        self.mid2 = Conv2d(cb, cb, cfg.kernel, 1, rng, dtype=dtype)
        self.dec = [Conv2d(cfg.level_channels[i + 1] + cfg.level_channels[i],
                           cfg.level_channels[i], cfg.kernel, 1, rng, dtype=dtype)
                    for i in range(len(cfg.level_channels) - 1)]
        self.decn = [GroupNorm(c, dtype=dtype) for c in cfg.level_channels[:-1]]
        self.out = Conv2d(cfg.level_channels[0], cfg.in_channels, cfg.kernel, 1,
                          rng, dtype=dtype)

    # -- pieces shared with the fused adapter path ---------------------------

    def embed_time(self, t) -> Tensor:
        emb = Tensor(time_embed(t, self.config.time_dim).astype(
            self.t_in.weight.dtype, copy=False))
        return self.t_out(T.silu(self.t_in(emb)))

    def encoder_features(self, z: Tensor, temb: Tensor) -> list[Tensor]:
        feats = []
        h = z
        for level in self.enc:
            h = level(h, temb)
            feats.append(h)
        return feats

    def decode_from(self, feats: list[Tensor]) -> Tensor:
        h = T.silu(self.midn(self.mid1(feats[-1])))
        h = self.mid2(h)
        for i in range(len(self.dec) - 1, -1, -1):
            skip = feats[i]
            h = T.upsample_nearest(h, (skip.shape[2], skip.shape[3]))
            h = T.concat([h, skip], axis=1)
            h = T.silu(self.decn[i](self.dec[i](h)))
        return self.out(h)

    def forward(self, z, t) -> tuple[Tensor, list[Tensor]]:
        """(B, C, H, W) latents + per-item steps -> (eps_pred, encoder features)."""
        z = T.as_tensor(z)
        if z.ndim != 4 or z.shape[1] != self.config.in_channels:
            raise ValueError(f"latent shape {z.shape} incompatible with config")
        temb = self.embed_time(t)
        feats = self.encoder_features(z, temb)
        return self.decode_from(feats), feats


def unet_forward(unet: UNet, z_t: np.ndarray, t) -> tuple[np.ndarray, list[np.ndarray]]:
    """Inference-mode forward returning plain arrays."""
    eps, feats = unet(z_t, t)
    return eps.data, [f.data for f in feats]


def draw_training_noise(z_batch: np.ndarray, schedule, seed: int):
    """Seeded (t, eps, z_t) draws shared by the plain and adapter losses."""
    rng = np.random.default_rng(seed)
    B = z_batch.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(z_batch.shape).astype(z_batch.dtype)
    ab = schedule.abar(t).reshape(B, 1, 1, 1)
    z_t = (np.sqrt(ab) * z_batch + np.sqrt(1.0 - ab) * eps).astype(z_batch.dtype)
    return t, eps, z_t


def denoising_loss(unet: UNet, z_batch: np.ndarray, schedule, seed: int) -> Tensor:
    """Noise-prediction MSE over a batch: draw t and eps, corrupt, regress."""
    if z_batch.ndim != 4 or z_batch.shape[0] == 0:
        raise ValueError("expected a non-empty (B, C, H, W) latent batch")
    t, eps, z_t = draw_training_noise(z_batch, schedule, seed)
    eps_pred, _ = unet(z_t, t)
    loss = ((eps_pred - Tensor(eps)) ** 2.0).mean()
    T.ensure_finite(loss.data, "denoising loss")
    return loss
