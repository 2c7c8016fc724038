"""Experiment configuration: one serializable tree covering every stage.

A config echo is written into every output directory and its hash is checked
between stages, so silently inconsistent pipelines are refused.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datakit import PreprocessConfig, SynthConfig


@dataclass(frozen=True)
class ScheduleSection:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 2e-2


@dataclass(frozen=True)
class VaeSection:
    variant: str = "analytic"          # "analytic" | "conv"
    patch: tuple[int, int] = (4, 4)    # analytic variant
    d_z: int = 16                      # analytic: must equal patch area for bijection
    conv_d_z: int = 4
    conv_channels: tuple[int, int] = (16, 32)
    beta_kl: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class UNetSection:
    level_channels: tuple[int, ...] = (32, 64, 128)
    time_dim: int = 64
    kernel: int = 3


@dataclass(frozen=True)
class ProjectorSection:
    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (5, 2, 2, 2)
    kernel: int = 3


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    val_interval: int = 500
    val_items: int = 8
    val_ddim_steps: int = 20
    subject: str = "all"               # "all" or a subject id as string
    subject_layer: bool = False


@dataclass(frozen=True)
class MetricSection:
    n_bands: int = 8
    dim: int = 16
    pooling_width: int = 8
    embedder_seed: int = 0
    ridge: float = 1e-6
    resamples: int = 4000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    chunk_seconds: float = 3.5
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    ood_tracks: tuple[int, ...] = (0,)
    sampler_ddim_steps: int = 50
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    vae: VaeSection = field(default_factory=VaeSection)
    unet: UNetSection = field(default_factory=UNetSection)
    projector: ProjectorSection = field(default_factory=ProjectorSection)
    train_vae: TrainSection = field(default_factory=lambda: TrainSection(
        steps=400, lr=1e-3, val_interval=200))
    train_diffusion: TrainSection = field(default_factory=lambda: TrainSection(
        steps=1500, lr=3e-4, val_interval=500))
    train_adapter: TrainSection = field(default_factory=lambda: TrainSection(
        steps=2000, lr=3e-4, val_interval=500))
    train_baseline: TrainSection = field(default_factory=lambda: TrainSection(
        steps=2000, lr=3e-4, val_interval=500))
    metrics: MetricSection = field(default_factory=MetricSection)


_SECTIONS = {
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "schedule": ScheduleSection,
    "vae": VaeSection,
    "unet": UNetSection,
    "projector": ProjectorSection,
    "train_vae": TrainSection,
    "train_diffusion": TrainSection,
    "train_adapter": TrainSection,
    "train_baseline": TrainSection,
    "metrics": MetricSection,
}


def _coerce(cls, data: dict):
    """Rebuild a dataclass from JSON data, restoring tuple-typed fields."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name.startswith("_") or f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


FullConfig = ExperimentConfig


def default_config() -> FullConfig:
    return FullConfig()


def to_dict(cfg: FullConfig) -> dict:
    out = dataclasses.asdict(cfg)

    def scrub(obj):
        if isinstance(obj, dict):
            return {k: scrub(v) for k, v in obj.items() if not k.startswith("_")}
        if isinstance(obj, (list, tuple)):
            return [scrub(v) for v in obj]
        return obj

    return scrub(out)


def from_dict(data: dict) -> FullConfig:
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _coerce(_SECTIONS[key], value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return FullConfig(**kwargs)


def config_hash(cfg: FullConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_config(path: str | Path, cfg: FullConfig) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path) -> FullConfig:
    return from_dict(json.loads(Path(path).read_text()))


# -- derived geometry ---------------------------------------------------------


def spectrogram_chunk_frames(cfg: FullConfig) -> int:
    return round(cfg.chunk_seconds * cfg.synth.spec_fps)


def eeg_chunk_steps(cfg: FullConfig) -> int:
    return round(cfg.chunk_seconds * cfg.synth.eeg_rate)


def latent_geometry(cfg: FullConfig) -> tuple[int, int, int]:
    """(F_z, S_z, D_z) implied by the VAE section and chunk geometry."""
    frames = spectrogram_chunk_frames(cfg)
    bins = cfg.synth.freq_bins
    if cfg.vae.variant == "analytic":
        ph, pw = cfg.vae.patch
        return (bins // ph, frames // pw, cfg.vae.d_z)
    from .ndcore.kernels import conv_out_length
    f_z = conv_out_length(conv_out_length(bins, 2), 2)
    s_z = conv_out_length(conv_out_length(frames, 2), 2)
    return (f_z, s_z, cfg.vae.conv_d_z)
