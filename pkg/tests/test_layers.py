"""Layer contracts: shapes, gradient fidelity per layer kind, Adam, containers."""

import numpy as np
import pytest

from eegdiff.ndcore import (Adam, Conv1d, Conv2d, GroupNorm, Identity, Linear,
                            MissingGradient, Module, Parameter, Sequential, SiLU,
                            Tensor, backpropagate, evaluate,
                            finite_difference_gradient, relative_error,
                            load_into_tree, load_tensors, save_tensors, save_tree,
                            tree_hash)
from eegdiff.ndcore.serialize import ContainerError


def rng64(seed):
    return np.random.default_rng(seed)


def layer_gradcheck(make_layer, in_shape, seeds=range(5), tol=1e-3):
    """Analytic parameter/input grads vs central differences, 64-bit."""
    for seed in seeds:
        rng = rng64(seed)
        layer = make_layer(rng)
        x = rng.standard_normal(in_shape)
        gy = rng.standard_normal(evaluate(layer, x).shape)

        grads = backpropagate(layer, [x], gy)
        params = layer.named_parameters()
        for name, p in params.items():
            base = p.data.copy()

            def f(v, p=p):
                p.data = v
                out = float((evaluate(layer, x).data * gy).sum())
                return out

            num = finite_difference_gradient(f, base)
            p.data = base
            assert relative_error(grads[name], num) < tol, f"{name} seed={seed}"

        def fx(v):
            return float((evaluate(layer, v).data * gy).sum())

        assert relative_error(grads["input.0"], finite_difference_gradient(fx, x)) < tol


def test_linear_gradcheck():
    layer_gradcheck(lambda rng: Linear(5, 3, rng, dtype=np.float64), (4, 5))


def test_conv1d_gradcheck():
    layer_gradcheck(lambda rng: Conv1d(2, 3, 3, 2, rng, dtype=np.float64), (2, 2, 11))


def test_conv2d_gradcheck():
    layer_gradcheck(lambda rng: Conv2d(2, 3, 3, 2, rng, dtype=np.float64), (2, 2, 6, 5))


def test_groupnorm_gradcheck():
    layer_gradcheck(lambda rng: GroupNorm(4, dtype=np.float64), (2, 4, 3, 3))


def test_silu_stack_gradcheck():
    layer_gradcheck(
        lambda rng: Sequential(Linear(4, 4, rng, dtype=np.float64), SiLU(),
                               Linear(4, 2, rng, dtype=np.float64)),
        (3, 4))


def test_identity_evaluate():
    x = np.arange(12.0).reshape(3, 4)
    out = evaluate(Identity(), x)
    np.testing.assert_array_equal(out.data, x)


def test_linear_zero_weights_zero_bias():
    layer = Linear(4, 3, rng64(0))
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = 0.0
    out = evaluate(layer, np.ones((2, 4), dtype=np.float32))
    np.testing.assert_array_equal(out.data, np.zeros((2, 3), dtype=np.float32))


def test_identity_loss_sum_gives_ones_gradient():
    x = np.random.default_rng(0).standard_normal((3, 4))
    grads = backpropagate(Identity(), [x], np.ones((3, 4)))
    np.testing.assert_allclose(grads["input.0"], np.ones((3, 4)))


def test_evaluate_rejects_nonfinite():
    layer = Linear(2, 2, rng64(0))
    layer.weight.data[:] = np.inf
    with pytest.raises(FloatingPointError):
        evaluate(layer, np.ones((1, 2), dtype=np.float32))


def test_determinism_bitwise():
    rng = rng64(3)
    layer = Sequential(Conv2d(2, 4, 3, 1, rng64(1)), GroupNorm(4), SiLU())
    x = rng.standard_normal((2, 2, 5, 5)).astype(np.float32)
    a = evaluate(layer, x).data
    b = evaluate(layer, x).data
    assert np.array_equal(a, b)
    ga = backpropagate(layer, [x], np.ones_like(a))
    gb = backpropagate(layer, [x], np.ones_like(a))
    for k in ga:
        assert np.array_equal(ga[k], gb[k])


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_is_signed_lr():
    p = Parameter(np.array([1.0, -2.0], dtype=np.float64))
    p.grad = np.array([0.5, -3.0])
    opt = Adam({"p": p}, lr=0.1)
    opt.step()
    # bias-corrected m-hat = g, v-hat = g^2 -> update ~ -lr * sign(g)
    np.testing.assert_allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adam_zero_gradient_no_move():
    p = Parameter(np.array([1.5]))
    p.grad = np.zeros(1)
    opt = Adam({"p": p}, lr=0.1)
    opt.step()
    assert p.data[0] == pytest.approx(1.5)


def test_adam_quadratic_descends():
    w = Parameter(np.array([1.0], dtype=np.float64))
    opt = Adam({"w": w}, lr=0.1)
    values = [w.data[0]]
    for _ in range(2):
        w.grad = 2.0 * w.data
        opt.step()
        values.append(w.data[0])
    assert values[0] > values[1] > values[2] > 0.0


def test_adam_missing_gradient_raises():
    p = Parameter(np.ones(2))
    opt = Adam({"p": p})
    with pytest.raises(MissingGradient):
        opt.step()


def test_adam_frozen_parameter_untouched():
    frozen = Parameter(np.array([1.0, 2.0]))
    frozen.freeze()
    live = Parameter(np.array([3.0]))
    before = frozen.data.copy()
    opt = Adam({"f": frozen, "l": live}, lr=0.5)
    for _ in range(10):
        live.grad = np.ones(1)
        opt.step()
    assert np.array_equal(frozen.data, before)
    assert live.data[0] != 3.0


# ---------------------------------------------------------------------------
# container serialization


def test_container_roundtrip_bitexact(tmp_path):
    rng = rng64(5)
    tensors = {
        "a/weight": rng.standard_normal((3, 4)).astype(np.float32),
        "a/bias": rng.standard_normal(4).astype(np.float64),
        "idx": np.arange(6, dtype=np.int32),
    }
    path = tmp_path / "t.ndt"
    save_tensors(path, tensors, meta={"k": 1})
    loaded, manifest = load_tensors(path)
    assert manifest["meta"] == {"k": 1}
    for k, v in tensors.items():
        assert loaded[k].dtype == v.dtype
        assert np.array_equal(loaded[k], v)
        assert loaded[k].tobytes() == v.tobytes()


def test_container_truncation_detected(tmp_path):
    path = tmp_path / "t.ndt"
    save_tensors(path, {"x": np.ones((124, 3500), dtype=np.float32)})
    blob = path.read_bytes()
    # payload must be exactly 124*3500*4 bytes after the manifest
    assert blob.endswith(np.ones((124, 3500), dtype="<f4").tobytes())
    path.write_bytes(blob[:-8])
    with pytest.raises(ContainerError, match="truncated"):
        load_tensors(path)


def test_container_bad_magic(tmp_path):
    path = tmp_path / "t.ndt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ContainerError, match="magic"):
        load_tensors(path)


def test_tree_roundtrip_and_hash(tmp_path):
    rng = rng64(6)
    layer = Linear(3, 2, rng)
    params = layer.named_parameters()
    h0 = tree_hash(params)
    path = tmp_path / "lin.ndt"
    save_tree(path, params)

    other = Linear(3, 2, rng64(7))
    assert tree_hash(other.named_parameters()) != h0
    load_into_tree(path, other.named_parameters())
    assert tree_hash(other.named_parameters()) == h0
    for k, p in layer.named_parameters().items():
        assert np.array_equal(p.data, other.named_parameters()[k].data)
