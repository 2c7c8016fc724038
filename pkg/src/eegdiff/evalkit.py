"""Embedding-based evaluation: distribution distance, per-pair scores,
bootstrap significance, and cross-score matrices.

Analytic embedders stand in for large pretrained audio encoders behind the
same interface: band-energy pooling over the spectrogram grid followed by a
fixed seeded projection. The global embedder L2-normalizes (so the pairwise
score is an inner product of unit vectors); the frame embedder keeps a
per-window sequence for frame-level error metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


# ---------------------------------------------------------------------------
# embedders


@dataclass
class EmbedderParams:
    n_bands: int = 8
    dim: int = 16
    pooling_width: int = 8
    seed: int = 0
    center_global: np.ndarray | None = None  # pooled-feature centering constant
    _proj_global: np.ndarray = field(init=False, repr=False)
    _proj_frame: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        nf = 2 * self.n_bands
        self._proj_global = (rng.standard_normal((nf, self.dim)) / np.sqrt(nf)
                             ).astype(np.float64)
        self._proj_frame = (rng.standard_normal((self.n_bands, self.dim))
                            / np.sqrt(self.n_bands)).astype(np.float64)


def _band_pool(x: np.ndarray, n_bands: int) -> np.ndarray:
    """(F, S) grid -> (n_bands, S) band means over adjacent frequency rows."""
    F = x.shape[0]
    rows = F // n_bands
    if rows == 0:
        raise ValueError(f"grid has {F} rows, fewer than {n_bands} bands")
    trimmed = x[: rows * n_bands]
    return trimmed.reshape(n_bands, rows, -1).mean(axis=1)


def _global_features(x: np.ndarray, params: EmbedderParams) -> np.ndarray:
    bands = _band_pool(np.asarray(x, dtype=np.float64), params.n_bands)
    return np.concatenate([bands.mean(axis=1), bands.std(axis=1)])


def embed_global(x: np.ndarray, params: EmbedderParams) -> np.ndarray:
    """Unit-norm global embedding; order-invariant time pooling."""
    feats = _global_features(x, params)
    if params.center_global is not None:
        feats = feats - params.center_global
    e = feats @ params._proj_global
    norm = np.linalg.norm(e)
    if norm < 1e-12:  # documented degenerate case: all-zero spectrogram
        out = np.zeros(params.dim)
        out[0] = 1.0
        return out
    return e / norm


def calibrate_embedder(params: EmbedderParams, corpus: list[np.ndarray]) -> EmbedderParams:
    """Set the centering constant to the corpus mean of pooled features."""
    feats = np.stack([_global_features(x, params) for x in corpus])
    params.center_global = feats.mean(axis=0)
    return params


def embed_frames(x: np.ndarray, params: EmbedderParams) -> np.ndarray:
    """(F, S) -> (I, dim) with I = floor(S / pooling_width); no normalization."""
    x = np.asarray(x, dtype=np.float64)
    w = params.pooling_width
    n = x.shape[1] // w
    if n < 1:
        raise ValueError("grid shorter than one pooling window")
    bands = _band_pool(x[:, : n * w], params.n_bands)
    pooled = bands.reshape(params.n_bands, n, w).mean(axis=2).T  # (I, n_bands)
    return pooled @ params._proj_frame


# ---------------------------------------------------------------------------
# Gaussian fits and the Frechet distance


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def fit_gaussian(embeddings: np.ndarray, ridge: float = 1e-6) -> GaussianStats:
    """Sample mean and ridged covariance; diagonal shrinkage when n < dim."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError("need at least 2 embedding samples")
    n, d = e.shape
    mu = e.mean(axis=0)
    centered = e - mu
    cov = centered.T @ centered / (n - 1)
    if n < d:
        cov = np.diag(np.diag(cov))
    cov = cov + ridge * np.eye(d)
    return GaussianStats(mu, cov, n)


def sqrtm_psd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negatives clipped."""
    sigma = np.asarray(sigma, dtype=np.float64)
    asym = np.max(np.abs(sigma - sigma.T))
    if asym > 1e-9 * max(1.0, np.max(np.abs(sigma))):
        raise ValueError(f"matrix not symmetric (max asymmetry {asym:.2e})")
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    if vals.min() < -1e-8 * max(1.0, vals.max()):
        raise ValueError(f"matrix has eigenvalue {vals.min():.2e} < tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), clipped at 0."""
    root_a = sqrtm_psd(a.cov)
    inner = sqrtm_psd(root_a @ b.cov @ root_a)
    val = float(np.sum((a.mean - b.mean) ** 2)
                + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(inner))
    return max(val, 0.0)


def fad(set_gt: np.ndarray, set_gen: np.ndarray, ridge: float = 1e-6) -> float:
    return frechet_distance(fit_gaussian(set_gt, ridge), fit_gaussian(set_gen, ridge))


# ---------------------------------------------------------------------------
# per-pair scores


def pearson(e: np.ndarray, e_hat: np.ndarray) -> float:
    e = np.asarray(e, dtype=np.float64).ravel()
    e_hat = np.asarray(e_hat, dtype=np.float64).ravel()
    if e.shape != e_hat.shape or e.size < 2:
        raise ValueError("need equal-length vectors of size >= 2")
    a = e - e.mean()
    b = e_hat - e_hat.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        raise ValueError("Pearson undefined: both vectors constant")
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def clap_score(e: np.ndarray, e_hat: np.ndarray) -> float:
    """Inner product of unit-norm global embeddings."""
    e = np.asarray(e, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    for v in (e, e_hat):
        if abs(np.linalg.norm(v) - 1.0) > 1e-4:
            raise ValueError(f"embedding norm {np.linalg.norm(v):.6f} != 1")
    return float(e @ e_hat)


def mse_frames(e: np.ndarray, e_hat: np.ndarray) -> float:
    """(1/I) * squared Frobenius distance between frame sequences."""
    e = np.asarray(e, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    if e.shape != e_hat.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {e_hat.shape}")
    I = e.shape[0]
    return float(np.sum((e - e_hat) ** 2) / I)


# ---------------------------------------------------------------------------
# bootstrap significance


@dataclass(frozen=True)
class SignificanceResult:
    observed: float
    null_count: int
    p_value: float
    direction: str
    seed: int


def bootstrap_p(decoded: list, ground_truth: list, metric_fn,
                resamples: int = 4000, seed: int = 0,
                direction: str = "higher-better") -> SignificanceResult:
    """Re-pair decoded items with ground truths by index resampling.

    The observed statistic is the metric averaged over the true pairing. Each
    null draw samples decoded indices with replacement against the fixed
    ground-truth order; p = (1 + #at-least-as-extreme) / (resamples + 1).
    """
    if direction not in ("higher-better", "lower-better"):
        raise ValueError(f"unknown direction {direction!r}")
    n = len(decoded)
    if n < 2 or len(ground_truth) != n:
        raise ValueError("need >= 2 matched pairs")
    scores = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            scores[i, j] = metric_fn(decoded[i], ground_truth[j])
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("metric returned a non-finite value")
    observed = float(np.mean(np.diag(scores)))
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n, size=(resamples, n))
    null = scores[draws, np.arange(n)].mean(axis=1)
    if direction == "higher-better":
        extreme = int(np.sum(null >= observed))
    else:
        extreme = int(np.sum(null <= observed))
    p = (1 + extreme) / (resamples + 1)
    return SignificanceResult(observed, resamples, p, direction, seed)


# ---------------------------------------------------------------------------
# cross-score matrix


def cross_score_matrix(decoded_by_track: dict[int, list], gt_by_track: dict[int, list],
                       score_fn) -> tuple[np.ndarray, list[int], list[int]]:
    """M[i, j] = mean score between decoded chunks of track i and gt chunks of j."""
    rows = sorted(decoded_by_track)
    cols = sorted(gt_by_track)
    for t, chunks in list(decoded_by_track.items()) + list(gt_by_track.items()):
        if len(chunks) == 0:
            raise ValueError(f"track {t} has no chunks")
    M = np.empty((len(rows), len(cols)))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            vals = [score_fn(d, g) for d in decoded_by_track[i] for g in gt_by_track[j]]
            M[a, b] = float(np.mean(vals))
    return M, rows, cols


def diagonal_argmax_fraction(M: np.ndarray) -> float:
    n = min(M.shape)
    hits = sum(1 for i in range(n) if np.argmax(M[i]) == i)
    return hits / M.shape[0]


# ---------------------------------------------------------------------------
# report emission


def write_pgm(path: str | Path, matrix: np.ndarray) -> None:
    """Portable graymap (P5) of a matrix, min-max scaled to 0..255."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    img = (scaled * 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def write_csv_matrix(path: str | Path, M: np.ndarray, rows: list, cols: list,
                     corner: str = "decoded\\gt") -> None:
    lines = [",".join([corner] + [str(c) for c in cols])]
    for name, row in zip(rows, M):
        lines.append(",".join([str(name)] + [f"{v:.6f}" for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")
