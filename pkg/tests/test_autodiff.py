from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsab import autodiff as ad
from dsab.autodiff import NonFiniteError, Tape, Tensor, grad_check
from dsab.graph import AttentionGraph

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).value == 0.5


def test_softmax_of_zeros():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(2))).value, [0.5, 0.5])


def test_square_derivative_matches_central_difference():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape() as tape:
        y = ad.square(x)
    tape.backward(y)
    assert x.grad == pytest.approx(6.0)
    eps = 1e-5
    fd = ((3 + eps) ** 2 - (3 - eps) ** 2) / (2 * eps)
    assert abs(x.grad - fd) / abs(fd) < 1e-6


def test_grad_check_linear_function():
    c = np.array([1.5, -2.0, 0.25])
    err = grad_check(lambda p: ad.tsum(p[0] * c), [np.array([0.3, 0.1, -0.7])])
    assert err < 1e-9


def test_grad_check_constant_function():
    theta = np.array([1.0, 2.0])
    with Tape() as tape:
        p = Tensor(theta, requires_grad=True)
        out = ad.tsum(p * 0.0) + 4.0
    tape.backward(out)
    np.testing.assert_array_equal(p.grad, 0.0)
    assert grad_check(lambda q: ad.tsum(q[0] * 0.0) + 4.0, [theta]) == 0.0


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "exp", "leaky_relu", "square"])
def test_elementwise_gradients(op, rng):
    x = rng.normal(size=(3, 4))
    fn = getattr(ad, op)
    assert grad_check(lambda p: ad.tsum(fn(p[0]) * np.arange(12.0).reshape(3, 4)), [x]) < 1e-7


def test_log_and_div_gradients(rng):
    x = rng.uniform(0.5, 2.0, size=(4,))
    y = rng.uniform(0.5, 2.0, size=(4,))
    assert grad_check(lambda p: ad.tsum(ad.log(p[0]) + p[0] / p[1]), [x, y]) < 1e-7


def test_matmul_concat_slice_gradients(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

    def f(p):
        m = p[0] @ p[1]
        c = ad.concat([m, m[:, 1:2] * 2.0], axis=1)
        return ad.tsum(ad.tanh(c))

    assert grad_check(f, [a, b]) < 1e-7


def test_softmax_and_log_softmax_gradients(rng):
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))
    assert grad_check(lambda p: ad.tsum(ad.softmax(p[0], axis=1) * w), [x]) < 1e-7
    assert grad_check(lambda p: ad.tsum(ad.log_softmax(p[0], axis=1) * w), [x]) < 1e-7


def test_masked_mean_value_and_gradient(rng):
    x = rng.normal(size=(3, 4))
    mask = rng.random((3, 4)) > 0.4
    mask[0, 0] = True
    assert ad.masked_mean(Tensor(x), mask).value == pytest.approx(x[mask].mean())
    assert grad_check(lambda p: ad.masked_mean(ad.square(p[0]), mask), [x]) < 1e-7


def test_broadcast_row_vector_gradient(rng):
    x, b = rng.normal(size=(4, 3)), rng.normal(size=(3,))
    assert grad_check(lambda p: ad.tsum(ad.sigmoid(p[0] + p[1]) * p[1]), [x, b]) < 1e-7


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        ad.log(Tensor(np.array([0.0, 1.0])))
    with pytest.raises(NonFiniteError):
        ad.exp(Tensor(np.array([1e4])))


def test_tape_replay_is_bit_identical(rng):
    x, w = rng.normal(size=(6, 4)), rng.normal(size=(4, 2))

    def grads():
        p = Tensor(w, requires_grad=True)
        with Tape() as tape:
            out = ad.tsum(ad.tanh(Tensor(x) @ p))
        tape.backward(out)
        return p.grad.copy()

    np.testing.assert_array_equal(grads(), grads())


def _graph(rng, n):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    return AttentionGraph.from_pairs(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def test_attend_matches_edgewise_form(rng):
    from dsab.model import gat_conv, gat_conv_edgewise
    n, H, d_h, d_in = 7, 6, 5, 4
    g = _graph(rng, n)
    x, W, a = rng.normal(size=(n, d_in)), rng.normal(size=(H, d_h, d_in)), rng.normal(size=(H, 2 * d_h))
    fast = gat_conv(Tensor(x), Tensor(W), Tensor(a), g, groups=2).value
    slow = gat_conv_edgewise(Tensor(x), Tensor(W), Tensor(a), g, groups=2).value
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)


def test_graph_primitive_gradients(rng):
    from dsab.model import gat_conv, gat_conv_edgewise
    n, H, d_h, d_in = 6, 3, 2, 3
    g = _graph(rng, n)
    x, W, a = rng.normal(size=(n, d_in)), rng.normal(size=(H, d_h, d_in)), rng.normal(size=(H, 2 * d_h))
    w = rng.normal(size=(n, 1, d_h))
    for conv in (gat_conv, gat_conv_edgewise):
        err = grad_check(lambda p: ad.tsum(conv(p[0], p[1], p[2], g) * w), [x, W, a])
        assert err < 1e-7, conv.__name__


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    p = ad.softmax(Tensor(x), axis=1).value
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(p > 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_log_softmax_is_log_of_softmax(x):
    np.testing.assert_allclose(np.exp(ad.log_softmax(Tensor(x), axis=1).value),
                               ad.softmax(Tensor(x), axis=1).value, rtol=1e-12, atol=1e-15)
