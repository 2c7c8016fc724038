"""JIT-compiled inner loops for strided convolutions and nearest-neighbor resampling.

All kernels operate on channels-last contiguous arrays; the dispatch layer in
``kernels.py`` converts from the package's channels-first convention. Loops are
written so the innermost axis is contiguous and SIMD-friendly.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=True)


@njit(**_JIT)
def conv1d_fwd(xp, w, stride, out):
    # xp: (B, Lp, Ci), w: (K, Ci, Co), out: (B, Lo, Co) pre-zeroed
    B, Lo, Co = out.shape
    K, Ci, _ = w.shape
    for b in range(B):
        for j in range(Lo):
            o = out[b, j]
            for k in range(K):
                xr = xp[b, j * stride + k]
                wm = w[k]
                for ci in range(Ci):
                    v = xr[ci]
                    wr = wm[ci]
                    for co in range(Co):
                        o[co] += v * wr[co]


@njit(**_JIT)
def conv1d_bwd_x(gy, w, stride, gxp):
    # gy: (B, Lo, Co), w: (K, Ci, Co), gxp: (B, Lp, Ci) pre-zeroed
    B, Lo, Co = gy.shape
    K, Ci, _ = w.shape
    for b in range(B):
        for j in range(Lo):
            gr = gy[b, j]
            for k in range(K):
                gx = gxp[b, j * stride + k]
                wm = w[k]
                for ci in range(Ci):
                    s = 0.0
                    wr = wm[ci]
                    for co in range(Co):
                        s += wr[co] * gr[co]
                    gx[ci] += s


@njit(**_JIT)
def conv1d_bwd_w(gy, xp, stride, gw):
    # gw: (K, Ci, Co) pre-zeroed
    B, Lo, Co = gy.shape
    K, Ci, _ = gw.shape
    for b in range(B):
        for j in range(Lo):
            gr = gy[b, j]
            for k in range(K):
                xr = xp[b, j * stride + k]
                gm = gw[k]
                for ci in range(Ci):
                    v = xr[ci]
                    gwr = gm[ci]
                    for co in range(Co):
                        gwr[co] += v * gr[co]


@njit(**_JIT)
def conv2d_fwd(xp, w, sh, sw, out):
    # xp: (B, Hp, Wp, Ci), w: (KH, KW, Ci, Co), out: (B, Ho, Wo, Co) pre-zeroed
    B, Ho, Wo, Co = out.shape
    KH, KW, Ci, _ = w.shape
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                o = out[b, i, j]
                for kh in range(KH):
                    for kw in range(KW):
                        xr = xp[b, i * sh + kh, j * sw + kw]
                        wm = w[kh, kw]
                        for ci in range(Ci):
                            v = xr[ci]
                            wr = wm[ci]
                            for co in range(Co):
                                o[co] += v * wr[co]


@njit(**_JIT)
def conv2d_bwd_x(gy, w, sh, sw, gxp):
    B, Ho, Wo, Co = gy.shape
    KH, KW, Ci, _ = w.shape
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                gr = gy[b, i, j]
                for kh in range(KH):
                    for kw in range(KW):
                        gx = gxp[b, i * sh + kh, j * sw + kw]
                        wm = w[kh, kw]
                        for ci in range(Ci):
                            s = 0.0
                            wr = wm[ci]
                            for co in range(Co):
                                s += wr[co] * gr[co]
                            gx[ci] += s


@njit(**_JIT)
def conv2d_bwd_w(gy, xp, sh, sw, gw):
    B, Ho, Wo, Co = gy.shape
    KH, KW, Ci, _ = gw.shape
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                gr = gy[b, i, j]
                for kh in range(KH):
                    for kw in range(KW):
                        xr = xp[b, i * sh + kh, j * sw + kw]
                        gm = gw[kh, kw]
                        for ci in range(Ci):
                            v = xr[ci]
                            gwr = gm[ci]
                            for co in range(Co):
                                gwr[co] += v * gr[co]


@njit(**_JIT)
def upsample_nearest_bwd(gy, ih, iw, gx):
    # gy: (B, C, Ho, Wo), gx: (B, C, H, W) pre-zeroed; ih/iw are source indices.
    B, C, Ho, Wo = gy.shape
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                si = ih[i]
                for j in range(Wo):
                    gx[b, c, si, iw[j]] += gy[b, c, i, j]
