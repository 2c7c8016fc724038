"""U-Net: shape contracts, time embedding, skip integrity, gradient fidelity."""

import numpy as np
import pytest

from eegdiff.denoiser import UNet, UNetConfig, denoising_loss, time_embed, unet_forward
from eegdiff.diffusion import build_linear_schedule
from eegdiff.ndcore import finite_difference_gradient, relative_error
from eegdiff.ndcore.tensor import Tensor

TINY = UNetConfig(in_channels=2, level_channels=(4, 6), time_dim=4)


def test_time_embed_zero():
    e = time_embed(0, 8)
    np.testing.assert_array_equal(e[0, :4], np.zeros(4))
    np.testing.assert_array_equal(e[0, 4:], np.ones(4))


def test_time_embed_deterministic():
    assert np.array_equal(time_embed(17, 64), time_embed(17, 64))


def test_time_embed_direct_formula():
    # dim 4, base 10000: frequencies 1 and 10000^(-1/2) = 1e-2
    e = time_embed(1, 4)[0]
    np.testing.assert_allclose(
        e, [np.sin(1.0), np.sin(1e-2), np.cos(1.0), np.cos(1e-2)], rtol=1e-6)


def test_time_embed_odd_dim_rejected():
    with pytest.raises(ValueError):
        time_embed(1, 5)


def test_unet_shape_contract():
    unet = UNet(UNetConfig(in_channels=4, level_channels=(8, 12, 16), time_dim=8), seed=0)
    z = np.random.default_rng(0).standard_normal((2, 4, 16, 14)).astype(np.float32)
    eps, feats = unet_forward(unet, z, [3, 177])
    assert eps.shape == z.shape
    assert [f.shape for f in feats] == [(2, 8, 16, 14), (2, 12, 8, 7), (2, 16, 4, 4)]


def test_unet_feature_halving_rule():
    unet = UNet(UNetConfig(in_channels=2, level_channels=(4, 6, 8), time_dim=4), seed=1)
    z = np.zeros((1, 2, 12, 10), dtype=np.float32)
    _, feats = unet_forward(unet, z, [1])
    dims = [(f.shape[2], f.shape[3]) for f in feats]
    assert dims == [(12, 10), (6, 5), (3, 3)]


def test_unet_bit_deterministic():
    unet = UNet(TINY, seed=2)
    z = np.random.default_rng(1).standard_normal((2, 2, 6, 6)).astype(np.float32)
    a, _ = unet_forward(unet, z, [5, 9])
    b, _ = unet_forward(unet, z, [5, 9])
    assert np.array_equal(a, b)


def test_unet_rejects_wrong_channels():
    unet = UNet(TINY, seed=0)
    with pytest.raises(ValueError):
        unet_forward(unet, np.zeros((1, 3, 6, 6), dtype=np.float32), [1])


def test_skip_connection_sensitivity():
    # zeroing any encoder feature must change the decoder output
    unet = UNet(UNetConfig(in_channels=2, level_channels=(4, 6, 8), time_dim=4), seed=3)
    z = np.random.default_rng(2).standard_normal((1, 2, 8, 8)).astype(np.float32)
    temb = unet.embed_time([7])
    feats = unet.encoder_features(Tensor(z), temb)
    base = unet.decode_from(feats).data
    for i in range(len(feats)):
        mutated = list(feats)
        mutated[i] = Tensor(np.zeros_like(feats[i].data))
        out = unet.decode_from(mutated).data
        assert np.max(np.abs(out - base)) > 1e-6, f"level {i} skip disconnected"


@pytest.mark.parametrize("seed", range(5))
def test_unet_full_gradcheck(seed):
    # gradient of mean(eps_pred) w.r.t. every parameter vs central differences
    unet = UNet(TINY, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(100 + seed)
    z = rng.standard_normal((1, 2, 4, 4))
    t = [int(rng.integers(1, 50))]

    def loss_value():
        eps, _ = unet(Tensor(z), t)
        return eps.mean()

    out = loss_value()
    unet.zero_grad()
    out.backward()
    for name, p in unet.named_parameters().items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        base = p.data.copy()

        def f(v, p=p):
            p.data = v
            return loss_value().item()

        numeric = finite_difference_gradient(f, base)
        p.data = base
        assert relative_error(analytic, numeric) < 1e-3, f"{name} seed={seed}"


def test_denoising_loss_oracle_zero():
    # a model that returns the exact drawn noise gives zero loss
    sched = build_linear_schedule(50)
    z = np.random.default_rng(3).standard_normal((4, 2, 4, 4)).astype(np.float32)

    class Oracle:
        def __call__(self, z_t, t):
            rng = np.random.default_rng(123)
            rng.integers(1, sched.T + 1, size=z.shape[0])
            eps = rng.standard_normal(z.shape).astype(np.float32)
            return Tensor(eps), []

    loss = denoising_loss(Oracle(), z, sched, seed=123)
    assert loss.item() == pytest.approx(0.0, abs=1e-10)


def test_denoising_loss_zero_model_near_one():
    sched = build_linear_schedule(50)
    z = np.random.default_rng(4).standard_normal((64, 2, 8, 8)).astype(np.float32)

    class Zero:
        def __call__(self, z_t, t):
            return Tensor(np.zeros_like(z_t.data if isinstance(z_t, Tensor) else z_t)), []

    loss = denoising_loss(Zero(), z, sched, seed=5)
    assert abs(loss.item() - 1.0) < 0.05


def test_denoising_loss_nonnegative_and_guards():
    sched = build_linear_schedule(20)
    unet = UNet(TINY, seed=1)
    z = np.random.default_rng(5).standard_normal((2, 2, 4, 4)).astype(np.float32)
    assert denoising_loss(unet, z, sched, seed=0).item() >= 0.0
    with pytest.raises(ValueError):
        denoising_loss(unet, np.empty((0, 2, 4, 4), dtype=np.float32), sched, seed=0)
