"""Training loops (VAE, unconditional diffusion, adapter, scratch-joint,
regression baseline) with embedding-score validation.

Validation decodes conditioned samples for held-out pairs, embeds both sides,
and averages the inner products; the best checkpoint is the highest-scoring
one. Training aborts on non-finite loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FullConfig, latent_geometry
from .controlnet import (ControlNetAdapter, Projector, ProjectorConfig,
                         adapter_loss, fused_forward_t, init_adapter_from)
from .datakit import DatasetSplit, PairedExample
from .denoiser import UNet, UNetConfig, denoising_loss
from .diffusion import NoiseSchedule, build_linear_schedule, sample
from .evalkit import EmbedderParams, calibrate_embedder, clap_score, embed_global
from .latentvae import AnalyticPatchVae, ConvVae, fit_latent_scale, vae_loss
from .ndcore import Adam
from .ndcore import tensor as T
from .ndcore.serialize import save_tree
from .ndcore.tensor import Tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainLog:
    mode: str
    losses: list[tuple[int, float]] = field(default_factory=list)
    validations: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    best_score: float = -np.inf
    checkpoint_paths: list[str] = field(default_factory=list)


def write_train_log(path: str | Path, log: TrainLog) -> None:
    lines = [f"step {s} loss {v:.6f}" for s, v in log.losses]
    lines += [f"val {s} score {v:.6f}" for s, v in log.validations]
    lines.append(f"best step {log.best_step} score {log.best_score:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_train_summary(path: str | Path, log: TrainLog) -> None:
    Path(path).write_text(json.dumps({
        "mode": log.mode, "steps": len(log.losses),
        "final_loss": log.losses[-1][1] if log.losses else None,
        "best_step": log.best_step, "best_score": log.best_score,
        "validations": log.validations, "checkpoints": log.checkpoint_paths,
    }, indent=2, sort_keys=True))


def step_seed(seed: int, step: int, salt: int = 0) -> int:
    return int(np.random.SeedSequence([seed, salt, step]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# model factories


def build_vae(cfg: FullConfig):
    frames = round(cfg.chunk_seconds * cfg.synth.spec_fps)
    if cfg.vae.variant == "analytic":
        return AnalyticPatchVae(cfg.synth.freq_bins, frames, cfg.vae.patch,
                                cfg.vae.d_z, seed=cfg.vae.seed)
    return ConvVae(cfg.synth.freq_bins, frames, d_z=cfg.vae.conv_d_z,
                   channels=cfg.vae.conv_channels, seed=cfg.vae.seed)


def build_unet(cfg: FullConfig, seed_offset: int = 0) -> UNet:
    _, _, d_z = latent_geometry(cfg)
    ucfg = UNetConfig(in_channels=d_z, level_channels=cfg.unet.level_channels,
                      time_dim=cfg.unet.time_dim, kernel=cfg.unet.kernel)
    return UNet(ucfg, seed=cfg.seed + 1000 + seed_offset)


def projector_config(cfg: FullConfig, channels: int | None = None) -> ProjectorConfig:
    steps_in = round(cfg.chunk_seconds * cfg.synth.eeg_rate)
    f_y = cfg.synth.channels - len(cfg.preprocess.excluded_channels)
    return ProjectorConfig(in_channels=channels or f_y, steps_in=steps_in,
                           channels=cfg.projector.channels,
                           strides=cfg.projector.strides, kernel=cfg.projector.kernel)


def build_adapter(cfg: FullConfig, unet: UNet, subject_count: int | None) -> ControlNetAdapter:
    return init_adapter_from(unet, projector_config(cfg), latent_geometry(cfg),
                             subject_count=subject_count, seed=cfg.seed + 2000)


def build_baseline(cfg: FullConfig) -> Projector:
    """Regression head with the projector's structure, trained with latent MSE."""
    return Projector(projector_config(cfg), latent_geometry(cfg),
                     np.random.default_rng(cfg.seed + 3000))


def build_schedule(cfg: FullConfig) -> NoiseSchedule:
    return build_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                                 cfg.schedule.beta_end)


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class PreparedData:
    z: np.ndarray          # (N, D_z, F_z, S_z), scaled latents
    y: np.ndarray          # (N, F_y, S_y)
    s: np.ndarray          # (N,) subject ids
    grids: list[np.ndarray]
    examples: list[PairedExample]
    latent_scale: float


def select_subject(items: list[PairedExample], subject: str) -> list[PairedExample]:
    if subject == "all":
        return list(items)
    sid = int(subject)
    out = [e for e in items if e.subject_id == sid]
    if not out:
        raise ValueError(f"no examples for subject {subject!r}")
    return out


def prepare(items: list[PairedExample], vae, latent_scale: float | None = None) -> PreparedData:
    if not items:
        raise ValueError("empty example list")
    grids = [e.x for e in items]
    z = vae.encode_mean_cf(np.stack(grids).astype(np.float32))
    scale = fit_latent_scale(z) if latent_scale is None else latent_scale
    return PreparedData(
        z=(z * scale).astype(np.float32),
        y=np.stack([e.y for e in items]).astype(np.float32),
        s=np.array([e.subject_id for e in items], dtype=np.int64),
        grids=grids, examples=list(items), latent_scale=scale)


# ---------------------------------------------------------------------------
# decoders (sampling paths used by validation and evaluation)


def decode_unconditional(unet: UNet, vae, schedule: NoiseSchedule, scale: float,
                         n: int, ddim_steps: int, seed: int) -> list[np.ndarray]:
    with T.no_grad():
        def fn(z, t):
            eps, _ = unet(z, np.full(z.shape[0], t))
            return eps.data

        f_z, s_z = _latent_spatial(unet, vae)
        z = sample(fn, schedule, ddim_steps,
                   (n, unet.config.in_channels, f_z, s_z), seed)
    return list(vae.decode_cf(z / scale))


def decode_conditioned(unet: UNet, adapter: ControlNetAdapter, vae,
                       schedule: NoiseSchedule, scale: float, y: np.ndarray,
                       s: np.ndarray | None, ddim_steps: int, seed: int,
                       use_subjects: bool) -> list[np.ndarray]:
    n = y.shape[0]
    yt = Tensor(y.astype(np.float32))
    sids = s if (use_subjects and adapter.subject is not None) else None
    with T.no_grad():
        def fn(z, t):
            return fused_forward_t(unet, adapter, Tensor(z),
                                   yt, np.full(n, t), sids).data

        f_z, s_z = _latent_spatial(unet, vae)
        z = sample(fn, schedule, ddim_steps,
                   (n, unet.config.in_channels, f_z, s_z), seed)
    return list(vae.decode_cf(z / scale))


def decode_baseline(baseline: Projector, vae, scale: float,
                    y: np.ndarray) -> list[np.ndarray]:
    with T.no_grad():
        z = baseline(Tensor(y.astype(np.float32))).data
    return list(vae.decode_cf(z / scale))


def _latent_spatial(unet: UNet, vae) -> tuple[int, int]:
    f_z, s_z, _ = vae.latent_shape
    return f_z, s_z


# ---------------------------------------------------------------------------
# validation


def validate(decoded: list[np.ndarray], ground_truth: list[np.ndarray],
             embedder: EmbedderParams) -> float:
    """Mean global-embedding inner product over matched pairs."""
    if not decoded or len(decoded) != len(ground_truth):
        raise ValueError("validation needs matched non-empty lists")
    scores = [clap_score(embed_global(d, embedder), embed_global(g, embedder))
              for d, g in zip(decoded, ground_truth)]
    return float(np.mean(scores))


def make_embedder(cfg: FullConfig, train_grids: list[np.ndarray]) -> EmbedderParams:
    params = EmbedderParams(n_bands=cfg.metrics.n_bands, dim=cfg.metrics.dim,
                            pooling_width=cfg.metrics.pooling_width,
                            seed=cfg.metrics.embedder_seed)
    return calibrate_embedder(params, train_grids)


# ---------------------------------------------------------------------------
# generic loop


def _run_loop(mode: str, steps: int, batch_size: int, seed: int, n_items: int,
              loss_of_batch, validate_now, val_interval: int,
              params: dict, save_to: Path | None) -> TrainLog:
    log = TrainLog(mode=mode)
    rng = np.random.default_rng(seed)
    best_snapshot = None
    for step in range(1, steps + 1):
        idx = rng.integers(0, n_items, size=batch_size)
        loss = loss_of_batch(idx, step_seed(seed, step))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"{mode}: non-finite loss at step {step}")
        log.losses.append((step, float(loss)))
        if validate_now is not None and (step % val_interval == 0 or step == steps):
            score = validate_now(step)
            log.validations.append((step, float(score)))
            if score > log.best_score:
                log.best_score = float(score)
                log.best_step = step
                best_snapshot = {k: p.data.copy() for k, p in params.items()}
    if best_snapshot is not None:
        for k, p in params.items():
            p.data = best_snapshot[k]
    if save_to is not None:
        save_tree(save_to, params, meta={"mode": mode, "best_step": log.best_step,
                                         "best_score": log.best_score})
        log.checkpoint_paths.append(str(save_to))
    return log


# ---------------------------------------------------------------------------
# mode-specific training entry points


def train_conv_vae(cfg: FullConfig, vae: ConvVae, train_grids: list[np.ndarray],
                   val_grids: list[np.ndarray], embedder: EmbedderParams,
                   save_to: Path | None = None) -> TrainLog:
    tc = cfg.train_vae
    params = vae.named_parameters()
    opt = Adam(params, lr=tc.lr)
    grids = np.stack(train_grids).astype(np.float32)

    def loss_of_batch(idx, s):
        vae.zero_grad()
        loss = vae_loss(vae, grids[idx], seed=s, beta_kl=cfg.vae.beta_kl)
        loss.backward()
        opt.step()
        return loss.item()

    def validate_now(step):
        with T.no_grad():
            decoded = [vae.decode(vae.encode_mean(g)) for g in val_grids]
        return validate(decoded, val_grids, embedder)

    return _run_loop("vae", tc.steps, tc.batch_size, cfg.seed + 10,
                     len(train_grids), loss_of_batch, validate_now,
                     tc.val_interval, params, save_to)


def train_diffusion(cfg: FullConfig, unet: UNet, data: PreparedData,
                    val: PreparedData, vae, embedder: EmbedderParams,
                    save_to: Path | None = None) -> TrainLog:
    tc = cfg.train_diffusion
    sched = build_schedule(cfg)
    params = unet.named_parameters()
    opt = Adam(params, lr=tc.lr)

    def loss_of_batch(idx, s):
        unet.zero_grad()
        loss = denoising_loss(unet, data.z[idx], sched, seed=s)
        loss.backward()
        opt.step()
        return loss.item()

    def validate_now(step):
        k = min(tc.val_items, len(val.grids))
        decoded = decode_unconditional(unet, vae, sched, data.latent_scale, k,
                                       tc.val_ddim_steps,
                                       seed=step_seed(cfg.seed, step, 1))
        return validate(decoded, val.grids[:k], embedder)

    return _run_loop("diffusion", tc.steps, tc.batch_size, cfg.seed + 20,
                     data.z.shape[0], loss_of_batch, validate_now,
                     tc.val_interval, params, save_to)


def train_adapter(cfg: FullConfig, unet: UNet, adapter: ControlNetAdapter,
                  data: PreparedData, val: PreparedData, vae,
                  embedder: EmbedderParams, scratch: bool = False,
                  save_to: Path | None = None) -> TrainLog:
    """Adapter fine-tuning with theta frozen, or joint training when scratch."""
    tc = cfg.train_adapter
    sched = build_schedule(cfg)
    use_subjects = adapter.subject is not None
    if scratch:
        unet.unfreeze()
        params = {f"unet.{k}": p for k, p in unet.named_parameters().items()}
        params.update({f"adapter.{k}": p for k, p in adapter.named_parameters().items()})
    else:
        unet.freeze()
        params = adapter.named_parameters()
    opt = Adam(params, lr=tc.lr)

    def loss_of_batch(idx, s):
        adapter.zero_grad()
        unet.zero_grad()
        sids = data.s[idx] if use_subjects else None
        loss = adapter_loss(unet, adapter, data.z[idx], data.y[idx], sched,
                            seed=s, subject_ids=sids)
        loss.backward()
        opt.step()
        return loss.item()

    def validate_now(step):
        k = min(tc.val_items, len(val.grids))
        decoded = decode_conditioned(unet, adapter, vae, sched, data.latent_scale,
                                     val.y[:k], val.s[:k], tc.val_ddim_steps,
                                     seed=step_seed(cfg.seed, step, 2),
                                     use_subjects=use_subjects)
        return validate(decoded, val.grids[:k], embedder)

    mode = "scratch-joint" if scratch else "adapter"
    return _run_loop(mode, tc.steps, tc.batch_size, cfg.seed + 30,
                     data.z.shape[0], loss_of_batch, validate_now,
                     tc.val_interval, params, save_to)


def train_baseline(cfg: FullConfig, baseline: Projector, data: PreparedData,
                   val: PreparedData, vae, embedder: EmbedderParams,
                   save_to: Path | None = None) -> TrainLog:
    """Direct regression y -> (scaled) latent with MSE, decoded via the VAE."""
    tc = cfg.train_baseline
    params = baseline.named_parameters()
    opt = Adam(params, lr=tc.lr)

    def loss_of_batch(idx, s):
        baseline.zero_grad()
        pred = baseline(Tensor(data.y[idx]))
        loss = ((pred - Tensor(data.z[idx])) ** 2.0).mean()
        if not np.isfinite(loss.data):
            raise TrainingDiverged("baseline: non-finite loss")
        loss.backward()
        opt.step()
        return loss.item()

    def validate_now(step):
        k = min(tc.val_items, len(val.grids))
        decoded = decode_baseline(baseline, vae, data.latent_scale, val.y[:k])
        return validate(decoded, val.grids[:k], embedder)

    return _run_loop("baseline", tc.steps, tc.batch_size, cfg.seed + 40,
                     data.z.shape[0], loss_of_batch, validate_now,
                     tc.val_interval, params, save_to)


def smoothed(values: list[float], window: int = 50) -> list[float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < window:
        return arr.tolist()
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid").tolist()
