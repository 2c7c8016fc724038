"""Autodiff engine: op gradients vs the finite-difference oracle."""

import numpy as np
import pytest

from eegdiff.ndcore import Tensor, finite_difference_gradient, relative_error
from eegdiff.ndcore import tensor as T


def check_unary(op, x, tol=1e-6):
    t = Tensor(x.copy(), requires_grad=True)
    out = op(t)
    gy = np.random.default_rng(0).standard_normal(out.shape)
    out.backward(gy)

    def f(xv):
        return float((op(Tensor(xv)).data * gy).sum())

    assert relative_error(t.grad, finite_difference_gradient(f, x)) < tol


@pytest.mark.parametrize("op", [
    T.texp, T.tlog, T.tsqrt, T.sigmoid, T.silu, T.softplus,
    lambda t: t * 3.0 + 1.0,
    lambda t: t**2.0,
    lambda t: (t * t).sum(),
    lambda t: t.mean(axis=0),
    lambda t: t.reshape(-1),
    lambda t: t.transpose(1, 0),
])
def test_unary_grads(op):
    rng = np.random.default_rng(7)
    x = rng.uniform(0.2, 1.8, size=(4, 5))  # positive domain covers log/sqrt
    check_unary(op, x)


def test_scalar_quadratic():
    w = Tensor(np.array(3.0), requires_grad=True)
    (w * w).backward()
    assert w.grad == pytest.approx(6.0)


def test_product_partials():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = Tensor(np.array(3.0), requires_grad=True)
    (x * y).backward()
    assert x.grad == pytest.approx(3.0)
    assert y.grad == pytest.approx(2.0)


def test_broadcast_add_grads():
    rng = np.random.default_rng(8)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    out = a + b
    out.backward(np.ones((3, 4)))
    np.testing.assert_allclose(a.grad, np.ones((3, 4)))
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_matmul_grads():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    out = ta @ tb
    gy = rng.standard_normal(out.shape)
    out.backward(gy)
    np.testing.assert_allclose(ta.grad, gy @ b.T, rtol=1e-12)
    np.testing.assert_allclose(tb.grad, a.T @ gy, rtol=1e-12)


def test_concat_and_slice_grads():
    rng = np.random.default_rng(10)
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    out = T.concat([a, b], axis=1)
    sliced = out[:, 1:4]
    sliced.backward(np.ones((2, 3)))
    np.testing.assert_allclose(a.grad, [[0, 1, 1], [0, 1, 1]])
    np.testing.assert_allclose(b.grad, [[1, 0], [1, 0]])


def test_group_norm_grads():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 4, 3, 3))
    gamma = rng.uniform(0.5, 1.5, 4)
    beta = rng.standard_normal(4)
    tx = Tensor(x.copy(), requires_grad=True)
    tg = Tensor(gamma.copy(), requires_grad=True)
    tb = Tensor(beta.copy(), requires_grad=True)
    out = T.group_norm(tx, tg, tb, groups=2)
    gy = rng.standard_normal(out.shape)
    out.backward(gy)

    def fx(v):
        return float((T.group_norm(Tensor(v), Tensor(gamma), Tensor(beta), 2).data * gy).sum())

    def fg(v):
        return float((T.group_norm(Tensor(x), Tensor(v), Tensor(beta), 2).data * gy).sum())

    def fb(v):
        return float((T.group_norm(Tensor(x), Tensor(gamma), Tensor(v), 2).data * gy).sum())

    assert relative_error(tx.grad, finite_difference_gradient(fx, x)) < 1e-6
    assert relative_error(tg.grad, finite_difference_gradient(fg, gamma)) < 1e-6
    assert relative_error(tb.grad, finite_difference_gradient(fb, beta)) < 1e-6


def test_reused_node_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0  # dy/dx = 2x + 3 = 7
    y.backward(np.array([1.0]))
    assert x.grad[0] == pytest.approx(7.0)


def test_no_grad_leaves_are_skipped():
    x = Tensor(np.ones(3), requires_grad=False)
    w = Tensor(np.ones(3), requires_grad=True)
    out = (x * w).sum()
    out.backward()
    assert x.grad is None
    np.testing.assert_allclose(w.grad, np.ones(3))


def test_fd_oracle_basics():
    # f(x) = x.x at x=2 -> 4
    g = finite_difference_gradient(lambda v: float(v[0] * v[0]), np.array([2.0]))
    assert g[0] == pytest.approx(4.0, abs=1e-6)
    # constant f -> zero vector
    g = finite_difference_gradient(lambda v: 1.0, np.ones(4))
    np.testing.assert_allclose(g, 0.0)
    # f(x, y) = x*y at (2, 3) -> (3, 2)
    g = finite_difference_gradient(lambda v: float(v[0] * v[1]), np.array([2.0, 3.0]))
    np.testing.assert_allclose(g, [3.0, 2.0], atol=1e-6)
