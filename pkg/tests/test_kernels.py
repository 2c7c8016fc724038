"""Kernel contracts checked against direct loop-based oracles, both backends."""

import numpy as np
import pytest

from eegdiff.ndcore import kernels


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    old = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(old)


def conv1d_loop(x, w, stride):
    """Reference convolution: explicit loops over the padded input."""
    B, Ci, L = x.shape
    Co, _, K = w.shape
    Lo, pl, pr = kernels.same_ceil_geometry(L, K, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    out = np.zeros((B, Co, Lo), dtype=x.dtype)
    for b in range(B):
        for co in range(Co):
            for j in range(Lo):
                acc = 0.0
                for ci in range(Ci):
                    for k in range(K):
                        acc += x.dtype.type(w[co, ci, k]) * xp[b, ci, j * stride + k]
                out[b, co, j] = acc
    return out


def conv2d_loop(x, w, stride):
    B, Ci, H, W = x.shape
    Co, _, KH, KW = w.shape
    sh, sw = stride
    Ho, pt, pb = kernels.same_ceil_geometry(H, KH, sh)
    Wo, pl, pr = kernels.same_ceil_geometry(W, KW, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out = np.zeros((B, Co, Ho, Wo), dtype=x.dtype)
    for b in range(B):
        for co in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for ci in range(Ci):
                        for kh in range(KH):
                            for kw in range(KW):
                                acc += w[co, ci, kh, kw] * xp[b, ci, i * sh + kh, j * sw + kw]
                    out[b, co, i, j] = acc
    return out


def test_same_ceil_lengths():
    # stacked strides (5, 2, 2, 2) on a 3500-step input, kernel 3
    lengths = [3500]
    for s in (5, 2, 2, 2):
        lengths.append(kernels.conv_out_length(lengths[-1], s))
    assert lengths[1:] == [700, 350, 175, 88]


def test_same_ceil_lengths_560():
    lengths = [560]
    for s in (5, 2, 2, 2):
        lengths.append(kernels.conv_out_length(lengths[-1], s))
    assert lengths[1:] == [112, 56, 28, 14]


@pytest.mark.parametrize("stride,L", [(1, 9), (2, 11), (5, 23), (3, 7)])
def test_conv1d_fwd_matches_loop(backend, stride, L):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, L)).astype(np.float64)
    w = rng.standard_normal((4, 3, 3)).astype(np.float64)
    got = kernels.conv1d_forward(x, w, stride)
    want = conv1d_loop(x, w, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride", [(1, 1), (2, 2), (2, 1)])
def test_conv2d_fwd_matches_loop(backend, stride):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 7, 6)).astype(np.float64)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float64)
    got = kernels.conv2d_forward(x, w, stride)
    want = conv2d_loop(x, w, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv1d_backward_matches_fd(backend):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 10))
    w = rng.standard_normal((3, 2, 3))
    gy = rng.standard_normal(kernels.conv1d_forward(x, w, 2).shape)
    gx, gw = kernels.conv1d_backward(gy, x, w, 2)

    def loss_x(xv):
        return float((kernels.conv1d_forward(xv, w, 2) * gy).sum())

    def loss_w(wv):
        return float((kernels.conv1d_forward(x, wv, 2) * gy).sum())

    from eegdiff.ndcore import finite_difference_gradient, relative_error
    assert relative_error(gx, finite_difference_gradient(loss_x, x)) < 1e-6
    assert relative_error(gw, finite_difference_gradient(loss_w, w)) < 1e-6


def test_conv2d_backward_matches_fd(backend):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 6, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    gy = rng.standard_normal(kernels.conv2d_forward(x, w, (2, 2)).shape)
    gx, gw = kernels.conv2d_backward(gy, x, w, (2, 2))

    def loss_x(xv):
        return float((kernels.conv2d_forward(xv, w, (2, 2)) * gy).sum())

    def loss_w(wv):
        return float((kernels.conv2d_forward(x, wv, (2, 2)) * gy).sum())

    from eegdiff.ndcore import finite_difference_gradient, relative_error
    assert relative_error(gx, finite_difference_gradient(loss_x, x)) < 1e-6
    assert relative_error(gw, finite_difference_gradient(loss_w, w)) < 1e-6


def test_backends_agree():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 9, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    kernels.set_backend("numpy")
    a = kernels.conv2d_forward(x, w, (2, 2))
    kernels.set_backend("numba")
    b = kernels.conv2d_forward(x, w, (2, 2))
    kernels.set_backend("numba" if kernels.backend() == "numba" else "numpy")
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


def test_upsample_nearest_roundtrip(backend):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 4))
    y = kernels.upsample_nearest_forward(x, (8, 7))
    assert y.shape == (2, 3, 8, 7)
    # forward is a gather: each output equals its nearest source cell
    for i in range(8):
        for j in range(7):
            np.testing.assert_array_equal(y[:, :, i, j], x[:, :, i * 4 // 8, j * 4 // 7])
    # backward scatter-adds exactly the gathered multiplicities
    gy = np.ones_like(y)
    gx = kernels.upsample_nearest_backward(gy, x.shape)
    assert gx.sum() == pytest.approx(gy.sum())

    def loss(xv):
        return float((kernels.upsample_nearest_forward(xv, (8, 7)) * gy).sum())

    from eegdiff.ndcore import finite_difference_gradient, relative_error
    assert relative_error(gx, finite_difference_gradient(loss, x)) < 1e-6
