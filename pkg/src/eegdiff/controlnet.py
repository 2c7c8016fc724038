"""Conditioning adapter: trainable encoder copy fed through zero convolutions.

The adapter receives ``c_in(z_t) + P(y)`` where P is a strided 1D conv-net
over the conditioning signal's time axis reshaped to latent dims, and c_in is
a zero-initialized convolution. Its per-level outputs pass through further
zero convolutions and are summed onto the frozen encoder's features, so at
initialization the fused model reproduces the frozen model exactly. An
optional per-subject linear channel-mixing layer runs before the projector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import UNet, draw_training_noise
from .ndcore import Conv1d, Conv2d, GroupNorm, Module, Parameter, SiLU
from .ndcore import tensor as T
from .ndcore.kernels import conv_out_length
from .ndcore.tensor import Tensor


@dataclass(frozen=True)
class ProjectorConfig:
    in_channels: int
    steps_in: int
    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (5, 2, 2, 2)
    kernel: int = 3

    def __post_init__(self):
        if len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must have equal length")

    def steps_out(self) -> int:
        n = self.steps_in
        for s in self.strides:
            n = conv_out_length(n, s)
        return n


class Projector(Module):
    """Strided 1D conv stack over time, then a pointwise head and a reshape
    to latent dims. Construction fails fast on any reshape mismatch."""

    def __init__(self, cfg: ProjectorConfig, latent_shape: tuple[int, int, int],
                 rng: np.random.Generator, dtype=np.float32):
        f_z, s_z, d_z = latent_shape
        got = cfg.steps_out()
        if got != s_z:
            raise ValueError(
                f"projector strides {cfg.strides} downsample {cfg.steps_in} -> {got} "
                f"steps but the latent needs S_z={s_z}")
        self.latent_shape = latent_shape
        self.stages = []
        cin = cfg.in_channels
        for c, s in zip(cfg.channels, cfg.strides):
            self.stages.append(Conv1d(cin, c, cfg.kernel, s, rng, dtype=dtype))
            self.stages.append(GroupNorm(c, dtype=dtype))
            self.stages.append(SiLU())
            cin = c
        self.head = Conv1d(cin, f_z * d_z, 1, 1, rng, dtype=dtype)

    def forward(self, y: Tensor) -> Tensor:
        """(B, F_y, S_y) -> (B, D_z, F_z, S_z)."""
        h = y
        for stage in self.stages:
            h = stage(h)
        h = self.head(h)
        f_z, s_z, d_z = self.latent_shape
        h = T.reshape(h, (h.shape[0], f_z, d_z, s_z))
        return T.transpose(h, (0, 2, 1, 3))


class SubjectLayer(Module):
    """One channel-mixing matrix per subject, identity at initialization."""

    def __init__(self, channels: int, subject_count: int, dtype=np.float32):
        self.weights = [Parameter(np.eye(channels, dtype=dtype))
                        for _ in range(subject_count)]

    def forward(self, y: Tensor, subject_ids) -> Tensor:
        subject_ids = np.atleast_1d(np.asarray(subject_ids))
        if y.ndim == 2:
            return self._apply_one(y, int(subject_ids[0]))
        if len(subject_ids) != y.shape[0]:
            raise ValueError("one subject id per batch item required")
        rows = []
        for i, s in enumerate(subject_ids):
            out = self._apply_one(y[int(i)], int(s))
            rows.append(T.reshape(out, (1,) + out.shape))
        return T.concat(rows, axis=0)

    def _apply_one(self, y2d: Tensor, s: int) -> Tensor:
        if not (0 <= s < len(self.weights)):
            raise KeyError(f"unknown subject id {s}")
        return T.matmul(self.weights[s], y2d)


def subject_layer(layer: SubjectLayer, y: np.ndarray, s: int) -> np.ndarray:
    """Numpy convenience wrapper for a single (F_y, S_y) signal."""
    return layer(Tensor(np.asarray(y, dtype=np.float32)), s).data


class ControlNetAdapter(Module):
    """Encoder copy + input/per-level zero convs + projector (+ subject layer)."""

    def __init__(self, donor: UNet, projector_cfg: ProjectorConfig,
                 latent_shape: tuple[int, int, int],
                 subject_count: int | None = None, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        cfg = donor.config
        from .denoiser import EncoderLevel  # same block type as the donor
        chans = (cfg.in_channels,) + cfg.level_channels
        self.enc = [EncoderLevel(chans[i], chans[i + 1], 1 if i == 0 else 2,
                                 cfg.time_dim, cfg.kernel, rng, dtype=dtype)
                    for i in range(len(cfg.level_channels))]
        donor_enc = {k: p for k, p in donor.named_parameters().items()
                     if k.startswith("enc.")}
        mine = {k: p for k, p in self.named_parameters().items()
                if k.startswith("enc.")}
        if set(donor_enc) != set(mine):
            raise ValueError("adapter encoder structure does not match donor")
        for k, p in mine.items():
            p.data = donor_enc[k].data.copy()

        self.c_in = Conv2d(cfg.in_channels, cfg.in_channels, 1, 1, rng,
                           dtype=dtype, zero_init=True)
        self.c_levels = [Conv2d(c, c, 1, 1, rng, dtype=dtype, zero_init=True)
                         for c in cfg.level_channels]
        self.projector = Projector(projector_cfg, latent_shape, rng, dtype=dtype)
        self.subject = (SubjectLayer(projector_cfg.in_channels, subject_count, dtype=dtype)
                        if subject_count else None)

    def features(self, z_t: Tensor, y: Tensor, temb: Tensor,
                 subject_ids=None) -> list[Tensor]:
        if self.subject is not None and subject_ids is not None:
            y = self.subject(y, subject_ids)
        x = self.c_in(z_t) + self.projector(y)
        feats = []
        h = x
        for level in self.enc:
            h = level(h, temb)
            feats.append(h)
        return feats


def init_adapter_from(unet: UNet, projector_cfg: ProjectorConfig,
                      latent_shape: tuple[int, int, int],
                      subject_count: int | None = None, seed: int = 0,
                      dtype=np.float32) -> ControlNetAdapter:
    return ControlNetAdapter(unet, projector_cfg, latent_shape,
                             subject_count=subject_count, seed=seed, dtype=dtype)


def adapter_forward(unet: UNet, adapter: ControlNetAdapter, z_t, y, t,
                    subject_ids=None) -> list[np.ndarray]:
    """Per-level adapter features (before the zero convs), as arrays."""
    temb = unet.embed_time(t)
    feats = adapter.features(T.as_tensor(z_t), T.as_tensor(y), temb, subject_ids)
    return [f.data for f in feats]


def fused_forward_t(unet: UNet, adapter: ControlNetAdapter, z_t: Tensor, y: Tensor,
                    t, subject_ids=None) -> Tensor:
    temb = unet.embed_time(t)
    donor_feats = unet.encoder_features(z_t, temb)
    ctrl_feats = adapter.features(z_t, y, temb, subject_ids)
    fused = [adapter.c_levels[i](ctrl_feats[i]) + donor_feats[i]
             for i in range(len(donor_feats))]
    return unet.decode_from(fused)


def fused_forward(unet: UNet, adapter: ControlNetAdapter, z_t: np.ndarray,
                  y: np.ndarray, t, subject_ids=None) -> np.ndarray:
    return fused_forward_t(unet, adapter, T.as_tensor(z_t), T.as_tensor(y), t,
                           subject_ids).data


def adapter_loss(unet: UNet, adapter: ControlNetAdapter, z_batch: np.ndarray,
                 y_batch: np.ndarray, schedule, seed: int,
                 subject_ids=None) -> Tensor:
    """Conditioned denoising loss; identical draws to ``denoising_loss``."""
    if z_batch.ndim != 4 or z_batch.shape[0] == 0:
        raise ValueError("expected a non-empty (B, C, H, W) latent batch")
    if y_batch.shape[0] != z_batch.shape[0]:
        raise ValueError("conditioning batch size mismatch")
    t, eps, z_t = draw_training_noise(z_batch, schedule, seed)
    eps_pred = fused_forward_t(unet, adapter, Tensor(z_t), Tensor(y_batch), t,
                               subject_ids)
    loss = ((eps_pred - Tensor(eps)) ** 2.0).mean()
    T.ensure_finite(loss.data, "adapter loss")
    return loss
