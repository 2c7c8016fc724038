"""Convolution and resampling kernels with a numba fast path and a numpy fallback.

Backend selection: the environment variable ``EEGDIFF_BACKEND`` may be set to
``"numba"`` or ``"numpy"``. Default is numba when importable, numpy otherwise.
Both paths implement identical contracts; ``benchmarks/bench_kernels.py``
compares their throughput.

Array convention at this layer is channels-first: 1D data is (B, C, L) and 2D
data is (B, C, H, W). Padding follows the project-wide "same-ceil" rule:
output length = ceil(input / stride) along each strided axis.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from . import _numba_kernels as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

_env = os.environ.get("EEGDIFF_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"EEGDIFF_BACKEND must be 'numba' or 'numpy', got {_env!r}")
if _env == "numba" and _nb is None:
    raise ImportError("EEGDIFF_BACKEND=numba but numba is not importable")
_BACKEND = _env or ("numba" if _nb is not None else "numpy")


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by the benchmark and tests)."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and _nb is None:
        raise ImportError("numba backend requested but numba is not importable")
    _BACKEND = name


def same_ceil_geometry(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output length and (left, right) padding for the same-ceil rule."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    left = total // 2
    return out, left, total - left


def conv_out_length(length: int, stride: int) -> int:
    return -(-length // stride)


# ---------------------------------------------------------------------------
# 1D convolution


def conv1d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """x (B, Ci, L), w (Co, Ci, K) -> (B, Co, ceil(L/stride))."""
    B, Ci, L = x.shape
    Co, _, K = w.shape
    Lo, pl, pr = same_ceil_geometry(L, K, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    if _BACKEND == "numba":
        xcl = np.ascontiguousarray(xp.transpose(0, 2, 1))
        wcl = np.ascontiguousarray(w.transpose(2, 1, 0))
        out = np.zeros((B, Lo, Co), dtype=x.dtype)
        _nb.conv1d_fwd(xcl, wcl, stride, out)
        return np.ascontiguousarray(out.transpose(0, 2, 1))
    out = np.zeros((B, Co, Lo), dtype=x.dtype)
    for k in range(K):
        xs = xp[:, :, k : k + stride * Lo : stride]
        out += np.matmul(w[None, :, :, k], xs)
    return out


def conv1d_backward(
    gy: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (gx, gw) of conv1d_forward."""
    B, Ci, L = x.shape
    Co, _, K = w.shape
    Lo, pl, pr = same_ceil_geometry(L, K, stride)
    if _BACKEND == "numba":
        xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
        xcl = np.ascontiguousarray(xp.transpose(0, 2, 1))
        gycl = np.ascontiguousarray(gy.transpose(0, 2, 1))
        wcl = np.ascontiguousarray(w.transpose(2, 1, 0))
        gxp = np.zeros_like(xcl)
        gwcl = np.zeros_like(wcl)
        _nb.conv1d_bwd_x(gycl, wcl, stride, gxp)
        _nb.conv1d_bwd_w(gycl, xcl, stride, gwcl)
        gx = np.ascontiguousarray(gxp.transpose(0, 2, 1))[:, :, pl : pl + L]
        return gx, np.ascontiguousarray(gwcl.transpose(2, 1, 0))
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for k in range(K):
        xs = xp[:, :, k : k + stride * Lo : stride]
        gxp[:, :, k : k + stride * Lo : stride] += np.matmul(w[None, :, :, k].swapaxes(1, 2), gy)
        gw[:, :, k] = np.einsum("bol,bil->oi", gy, xs, optimize=True)
    return gxp[:, :, pl : pl + L], gw


# ---------------------------------------------------------------------------
# 2D convolution


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: tuple[int, int]) -> np.ndarray:
    """x (B, Ci, H, W), w (Co, Ci, KH, KW) -> (B, Co, ceil(H/sh), ceil(W/sw))."""
    B, Ci, H, W = x.shape
    Co, _, KH, KW = w.shape
    sh, sw = stride
    Ho, pt, pb = same_ceil_geometry(H, KH, sh)
    Wo, pl, pr = same_ceil_geometry(W, KW, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if _BACKEND == "numba":
        xcl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        wcl = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
        out = np.zeros((B, Ho, Wo, Co), dtype=x.dtype)
        _nb.conv2d_fwd(xcl, wcl, sh, sw, out)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out = np.zeros((B, Co, Ho, Wo), dtype=x.dtype)
    for kh in range(KH):
        for kw in range(KW):
            xs = xp[:, :, kh : kh + sh * Ho : sh, kw : kw + sw * Wo : sw]
            out += np.matmul(
                w[None, :, :, kh, kw], xs.reshape(B, Ci, Ho * Wo)
            ).reshape(B, Co, Ho, Wo)
    return out


def conv2d_backward(
    gy: np.ndarray, x: np.ndarray, w: np.ndarray, stride: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (gx, gw) of conv2d_forward."""
    B, Ci, H, W = x.shape
    Co, _, KH, KW = w.shape
    sh, sw = stride
    Ho, pt, pb = same_ceil_geometry(H, KH, sh)
    Wo, pl, pr = same_ceil_geometry(W, KW, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if _BACKEND == "numba":
        xcl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        gycl = np.ascontiguousarray(gy.transpose(0, 2, 3, 1))
        wcl = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
        gxp = np.zeros_like(xcl)
        gwcl = np.zeros_like(wcl)
        _nb.conv2d_bwd_x(gycl, wcl, sh, sw, gxp)
        _nb.conv2d_bwd_w(gycl, xcl, sh, sw, gwcl)
        gx = np.ascontiguousarray(gxp.transpose(0, 3, 1, 2))[:, :, pt : pt + H, pl : pl + W]
        return gx, np.ascontiguousarray(gwcl.transpose(3, 2, 0, 1))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gyf = gy.reshape(B, Co, Ho * Wo)
    for kh in range(KH):
        for kw in range(KW):
            xs = xp[:, :, kh : kh + sh * Ho : sh, kw : kw + sw * Wo : sw]
            gxp[:, :, kh : kh + sh * Ho : sh, kw : kw + sw * Wo : sw] += np.matmul(
                w[None, :, :, kh, kw].swapaxes(1, 2), gyf
            ).reshape(B, Ci, Ho, Wo)
            gw[:, :, kh, kw] = np.einsum(
                "bop,bip->oi", gyf, xs.reshape(B, Ci, Ho * Wo), optimize=True
            )
    return gxp[:, :, pt : pt + H, pl : pl + W], gw


# ---------------------------------------------------------------------------
# Nearest-neighbor resampling to an explicit target size


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    return (np.arange(dst) * src) // dst


def upsample_nearest_forward(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """x (B, C, H, W) -> (B, C, Ho, Wo), out[i, j] = x[i*H//Ho, j*W//Wo]."""
    Ho, Wo = size
    ih = _nearest_indices(x.shape[2], Ho)
    iw = _nearest_indices(x.shape[3], Wo)
    return np.ascontiguousarray(x[:, :, ih[:, None], iw[None, :]])


def upsample_nearest_backward(gy: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    B, C, H, W = in_shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    ih = _nearest_indices(H, Ho)
    iw = _nearest_indices(W, Wo)
    gx = np.zeros(in_shape, dtype=gy.dtype)
    if _BACKEND == "numba":
        _nb.upsample_nearest_bwd(np.ascontiguousarray(gy), ih, iw, gx)
        return gx
    np.add.at(gx, (slice(None), slice(None), ih[:, None], iw[None, :]), gy)
    return gx
