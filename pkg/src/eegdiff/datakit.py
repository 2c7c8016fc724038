"""Signal preprocessing, chunk alignment, dataset splits, and synthetic paired data.

Preprocessing is deliberately data-agnostic: channel exclusion, baseline
centering, robust scaling, and std clamping only — no filtering, no artifact
rejection. The synthetic corpus ties conditioning signals to spectrograms
through a known generative story (per-track band envelopes, a channel-lifting
map, per-subject mixing) so a working decoder is detectable by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ndcore.serialize import load_tensors, save_tensors


@dataclass
class RawRecording:
    data: np.ndarray  # (channels, steps)
    rate: float
    subject_id: int
    track_id: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("recording must be (channels, steps)")
        if self.rate <= 0:
            raise ValueError("sampling rate must be positive")


@dataclass
class ConditioningSignal:
    data: np.ndarray  # (channels, steps)
    subject_id: int
    track_id: int = -1


@dataclass(frozen=True)
class PreprocessConfig:
    excluded_channels: tuple[int, ...] = ()
    baseline_steps: int = 1000
    clamp_multiple: float = 20.0
    quantiles: tuple[float, float] = (0.25, 0.75)

    def __post_init__(self):
        if self.clamp_multiple <= 0:
            raise ValueError("clamp multiple must be positive")
        lo, hi = self.quantiles
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("invalid quantile pair")


@dataclass
class PairedExample:
    y: np.ndarray  # (channels, eeg steps)
    x: np.ndarray  # (freq bins, spec frames)
    subject_id: int
    track_id: int
    chunk_index: int


@dataclass
class DatasetSplit:
    train: list[PairedExample] = field(default_factory=list)
    validation: list[PairedExample] = field(default_factory=list)
    test: list[PairedExample] = field(default_factory=list)
    ood: list[PairedExample] = field(default_factory=list)


# ---------------------------------------------------------------------------
# preprocessing stages


def drop_channels(data: np.ndarray, excluded: tuple[int, ...]) -> np.ndarray:
    keep = [c for c in range(data.shape[0]) if c not in set(excluded)]
    if not keep:
        raise ValueError("channel exclusion removed every channel")
    return data[keep]


def center_baseline(data: np.ndarray, baseline_steps: int) -> np.ndarray:
    if data.shape[1] < baseline_steps:
        raise ValueError(f"recording of {data.shape[1]} steps shorter than "
                         f"baseline window {baseline_steps}")
    return data - data[:, :baseline_steps].mean(axis=1, keepdims=True)


def robust_scale(data: np.ndarray, quantiles: tuple[float, float]) -> np.ndarray:
    med = np.median(data, axis=1, keepdims=True)
    lo, hi = np.quantile(data, quantiles, axis=1, keepdims=True)
    iqr = hi - lo
    iqr[iqr == 0.0] = 1.0  # constant-channel fallback divisor
    return ((data - med) / iqr).astype(np.float32)


def clamp_std(data: np.ndarray, multiple: float) -> np.ndarray:
    std = data.std(axis=1, keepdims=True)
    bound = multiple * std
    return np.clip(data, -bound, bound)


def preprocess(rec: RawRecording, cfg: PreprocessConfig) -> ConditioningSignal:
    """Exclusion -> baseline centering -> robust scaling -> std clamping."""
    data = drop_channels(rec.data, cfg.excluded_channels)
    data = center_baseline(data, cfg.baseline_steps)
    data = robust_scale(data, cfg.quantiles)
    data = clamp_std(data, cfg.clamp_multiple)
    return ConditioningSignal(data.astype(np.float32), rec.subject_id, rec.track_id)


# ---------------------------------------------------------------------------
# chunking and splits


def chunk_align(signal: np.ndarray, spectrogram: np.ndarray, chunk_seconds: float,
                eeg_rate: float, spec_fps: float, subject_id: int = 0,
                track_id: int = 0) -> list[PairedExample]:
    """Cut both streams into aligned non-overlapping chunks; remainder dropped."""
    y_len = round(chunk_seconds * eeg_rate)
    x_len = round(chunk_seconds * spec_fps)
    dur_y = signal.shape[1] / eeg_rate
    dur_x = spectrogram.shape[1] / spec_fps
    if abs(dur_y - dur_x) > chunk_seconds:
        raise ValueError(f"stream durations differ by {abs(dur_y - dur_x):.2f}s, "
                         f"more than one chunk ({chunk_seconds}s)")
    n = min(signal.shape[1] // y_len, spectrogram.shape[1] // x_len)
    return [
        PairedExample(
            y=np.ascontiguousarray(signal[:, i * y_len:(i + 1) * y_len]),
            x=np.ascontiguousarray(spectrogram[:, i * x_len:(i + 1) * x_len]),
            subject_id=subject_id, track_id=track_id, chunk_index=i)
        for i in range(n)
    ]


def split_dataset(examples: list[PairedExample],
                  ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  ood_tracks: tuple[int, ...] = ()) -> DatasetSplit:
    """Per-track chunk-index split into train/validation/test; OOD isolated."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    by_stream: dict[tuple[int, int], list[PairedExample]] = {}
    for ex in examples:
        by_stream.setdefault((ex.track_id, ex.subject_id), []).append(ex)
    split = DatasetSplit()
    for (track, _subject), chunk_list in sorted(by_stream.items()):
        chunk_list.sort(key=lambda e: e.chunk_index)
        if track in set(ood_tracks):
            split.ood.extend(chunk_list)
            continue
        n = len(chunk_list)
        if n < 10:
            raise ValueError(f"track {track} has {n} chunks; need >= 10 to "
                             "realize all three splits")
        b1 = int(np.floor(n * ratios[0] + 1e-9))
        b2 = int(np.floor(n * (ratios[0] + ratios[1]) + 1e-9))
        split.train.extend(chunk_list[:b1])
        split.validation.extend(chunk_list[b1:b2])
        split.test.extend(chunk_list[b2:])
    return split


# ---------------------------------------------------------------------------
# synthetic paired corpus


@dataclass(frozen=True)
class SynthConfig:
    tracks: int = 8
    subjects: int = 3
    duration: float = 120.0
    channels: int = 16       # F_y
    eeg_rate: float = 160.0  # keeps projector stride chain aligned with S_z
    freq_bins: int = 64
    spec_fps: float = 16.0
    noise_sigma: float = 0.1
    n_bands: int = 8
    section_seconds: float = 1.0
    mod_depth: float = 0.5
    identity_lift: bool = False    # U = [I; 0] instead of a random lifting map
    identity_mixing: bool = False  # every W_subject = identity


@dataclass
class SynthCorpus:
    recordings: list[RawRecording]
    spectrograms: dict[int, np.ndarray]  # track_id -> (freq_bins, frames)
    envelopes: dict[int, np.ndarray]     # track_id -> (n_bands, frames)
    config: SynthConfig
    seed: int


def _track_envelopes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    # multiplicative section modulation keeps band base levels recoverable
    # from the cross-channel covariance of a scale-normalized mixture
    frames = int(round(cfg.duration * cfg.spec_fps))
    sec_frames = max(1, int(round(cfg.section_seconds * cfg.spec_fps)))
    n_sections = -(-frames // sec_frames)
    base = rng.uniform(0.2, 1.0, size=(cfg.n_bands, 1))
    mods = rng.uniform(-1.0, 1.0, size=(cfg.n_bands, n_sections)) * cfg.mod_depth
    env = base * (1.0 + np.repeat(mods, sec_frames, axis=1)[:, :frames])
    return np.clip(env, 0.02, 2.0).astype(np.float32)


def _band_profile(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    # fixed spectral shape within each band, identical across tracks
    shape = rng.uniform(0.3, 1.0, size=cfg.freq_bins).astype(np.float32)
    return shape


def _render_spectrogram(env: np.ndarray, profile: np.ndarray,
                        cfg: SynthConfig) -> np.ndarray:
    rows_per_band = cfg.freq_bins // cfg.n_bands
    band_of = np.arange(cfg.freq_bins) // rows_per_band
    band_of = np.minimum(band_of, cfg.n_bands - 1)
    return (env[band_of] * profile[:, None]).astype(np.float32)


def _upsample_env(env: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    steps = int(round(cfg.duration * cfg.eeg_rate))
    idx = (np.arange(steps) * env.shape[1]) // steps
    return env[:, idx]


def synth_generate(cfg: SynthConfig, seed: int) -> SynthCorpus:
    """Deterministic paired corpus: y = W_subject @ U @ upsample(env) + noise."""
    if cfg.freq_bins % cfg.n_bands:
        raise ValueError("freq_bins must be divisible by n_bands")
    if cfg.identity_lift and cfg.channels < cfg.n_bands:
        raise ValueError("identity lift needs channels >= n_bands")
    root = np.random.SeedSequence(seed)
    global_rng = np.random.default_rng(root.spawn(1)[0])
    profile = _band_profile(cfg, global_rng)
    if cfg.identity_lift:
        lift = np.zeros((cfg.channels, cfg.n_bands), dtype=np.float32)
        lift[: cfg.n_bands] = np.eye(cfg.n_bands, dtype=np.float32)
    else:
        lift = global_rng.standard_normal(
            (cfg.channels, cfg.n_bands)).astype(np.float32) / np.sqrt(cfg.n_bands)

    mixers = []
    for s in range(cfg.subjects):
        if cfg.identity_mixing:
            mixers.append(np.eye(cfg.channels, dtype=np.float32))
        else:
            srng = np.random.default_rng(np.random.SeedSequence([seed, 7, s]))
            w = np.eye(cfg.channels) + 0.3 * srng.standard_normal(
                (cfg.channels, cfg.channels)) / np.sqrt(cfg.channels)
            mixers.append(w.astype(np.float32))

    recordings: list[RawRecording] = []
    spectrograms: dict[int, np.ndarray] = {}
    envelopes: dict[int, np.ndarray] = {}
    for track in range(cfg.tracks):
        trng = np.random.default_rng(np.random.SeedSequence([seed, 11, track]))
        env = _track_envelopes(cfg, trng)
        envelopes[track] = env
        spectrograms[track] = _render_spectrogram(env, profile, cfg)
        up = _upsample_env(env, cfg)
        for subject in range(cfg.subjects):
            nrng = np.random.default_rng(np.random.SeedSequence([seed, 13, track, subject]))
            y = mixers[subject] @ (lift @ up)
            if cfg.noise_sigma > 0:
                y = y + cfg.noise_sigma * nrng.standard_normal(y.shape).astype(np.float32)
            recordings.append(RawRecording(y.astype(np.float32), cfg.eeg_rate,
                                           subject_id=subject, track_id=track))
    return SynthCorpus(recordings, spectrograms, envelopes, cfg, seed)


# ---------------------------------------------------------------------------
# corpus container I/O


def save_corpus(path: str | Path, corpus: SynthCorpus, meta: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for rec in corpus.recordings:
        tensors[f"eeg/t{rec.track_id:03d}/s{rec.subject_id:02d}"] = rec.data
    for track, spec in corpus.spectrograms.items():
        tensors[f"spec/t{track:03d}"] = spec
    full_meta = {"kind": "synth_corpus", "seed": corpus.seed,
                 "config": vars(corpus.config) | {}, **(meta or {})}
    save_tensors(path, tensors, meta=full_meta)


def load_corpus(path: str | Path) -> SynthCorpus:
    tensors, manifest = load_tensors(path)
    meta = manifest["meta"]
    cfg = SynthConfig(**meta["config"])
    recordings = []
    spectrograms: dict[int, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("eeg/"):
            _, t, s = name.split("/")
            recordings.append(RawRecording(arr, cfg.eeg_rate,
                                           subject_id=int(s[1:]), track_id=int(t[1:])))
        elif name.startswith("spec/"):
            spectrograms[int(name.split("/")[1][1:])] = arr
    recordings.sort(key=lambda r: (r.track_id, r.subject_id))
    return SynthCorpus(recordings, spectrograms, {}, cfg, meta["seed"])


# ---------------------------------------------------------------------------
# pipeline: corpus -> preprocessed, chunked, split dataset


def build_dataset(corpus: SynthCorpus, pre_cfg: PreprocessConfig,
                  chunk_seconds: float,
                  ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  ood_tracks: tuple[int, ...] = (0,)) -> DatasetSplit:
    """Center per recording, chunk, then robust-scale and clamp per chunk.

    Scaling statistics are per-chunk (recorded in the dataset manifest).
    """
    cfg = corpus.config
    examples: list[PairedExample] = []
    for rec in corpus.recordings:
        data = drop_channels(rec.data, pre_cfg.excluded_channels)
        data = center_baseline(data, pre_cfg.baseline_steps)
        chunks = chunk_align(data, corpus.spectrograms[rec.track_id], chunk_seconds,
                             cfg.eeg_rate, cfg.spec_fps,
                             subject_id=rec.subject_id, track_id=rec.track_id)
        for ex in chunks:
            ex.y = clamp_std(robust_scale(ex.y, pre_cfg.quantiles),
                             pre_cfg.clamp_multiple)
        examples.extend(chunks)
    return split_dataset(examples, ratios, ood_tracks)


def dataset_manifest(split: DatasetSplit, pre_cfg: PreprocessConfig,
                     chunk_seconds: float, extra: dict | None = None) -> dict:
    def inventory(items):
        return [{"track": e.track_id, "subject": e.subject_id, "chunk": e.chunk_index}
                for e in items]

    return {
        "preprocess": {**vars(pre_cfg) | {
            "excluded_channels": list(pre_cfg.excluded_channels),
            "quantiles": list(pre_cfg.quantiles)},
            "scaling_stats": "per-chunk"},
        "chunk_seconds": chunk_seconds,
        "counts": {"train": len(split.train), "validation": len(split.validation),
                   "test": len(split.test), "ood": len(split.ood)},
        "splits": {"train": inventory(split.train),
                   "validation": inventory(split.validation),
                   "test": inventory(split.test),
                   "ood": inventory(split.ood)},
        **(extra or {}),
    }


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
