import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mgfi_tvr import tensor as T
from mgfi_tvr.errors import DegenerateInputError, DimensionError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def test_matmul_is_bit_identical_to_triple_loop(rng):
    for shape in [(1, 1, 1), (3, 5, 2), (7, 4, 6)]:
        n, k, m = shape
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        assert np.array_equal(T.matmul(a, b), triple_loop(a, b))


def test_matmul_broadcasts_leading_axes(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    out = T.matmul(a, b)
    assert out.shape == (2, 3, 5)
    assert np.array_equal(out[1], triple_loop(a[1], b))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_backward_reduces_broadcast(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    dy = rng.normal(size=(2, 3, 5))
    da, db = T.matmul_backward(dy, a, b)
    assert da.shape == a.shape and db.shape == b.shape
    np.testing.assert_allclose(db, sum(a[i].T @ dy[i] for i in range(2)), atol=1e-12)


def test_linear_with_and_without_bias(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    np.testing.assert_allclose(T.linear(x, w, b), x @ w + b, atol=1e-12)
    np.testing.assert_allclose(T.linear(x, w), x @ w, atol=1e-12)


def test_layer_norm_two_element_example():
    # mean 2, biased variance 1
    y = T.layer_norm(np.array([[1.0, 3.0]]), T.LayerNormParams.identity(2))
    expected = np.array([[-1.0, 1.0]]) / math.sqrt(1.0 + T.LN_EPS)
    np.testing.assert_allclose(y, expected, rtol=0, atol=1e-15)


def test_layer_norm_matches_direct_formula(rng):
    x = rng.normal(size=(4, 6))
    g, b = rng.normal(size=6), rng.normal(size=6)
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    expected = (x - mu) / np.sqrt(var + T.LN_EPS) * g + b
    np.testing.assert_allclose(T.layer_norm(x, T.LayerNormParams(g, b)), expected, atol=1e-12)


def test_layer_norm_constant_row_is_finite():
    y = T.layer_norm(np.full((1, 4), 3.0), T.LayerNormParams.identity(4))
    assert np.all(y == 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-10, 10), st.floats(0.5, 4.0))
def test_layer_norm_ignores_affine_change_of_input(x, shift, scale):
    p = T.LayerNormParams.identity(5)
    var = np.min(x.var(axis=1)) * min(scale, 1.0) ** 2
    if var < 1e-4:
        return
    # invariance is exact up to eps: 1/sqrt(var + eps) shifts by at most eps / (2 var) relative, var the smaller one
    np.testing.assert_allclose(T.layer_norm(scale * x + shift, p), T.layer_norm(x, p),
                               rtol=T.LN_EPS / (2 * var), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    y = T.softmax(x)
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-12


def test_softmax_large_logits_do_not_overflow():
    y = T.softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(y, [0.5, 0.5, 0.0], atol=1e-15)


def test_softmax_mask_zeroes_padding(rng):
    x = rng.normal(size=(2, 4))
    mask = np.array([[True, True, False, False], [True, True, True, True]])
    y = T.softmax(x, mask)
    assert np.all(y[0, 2:] == 0.0)
    np.testing.assert_allclose(y[0, :2], T.softmax(x[0, :2]), atol=1e-15)


def test_softmax_shift_invariant(rng):
    x = rng.normal(size=7)
    np.testing.assert_allclose(T.softmax(x + 123.0), T.softmax(x), atol=1e-14)


def test_row_max_breaks_ties_toward_lowest_index():
    vals, idx = T.row_max(np.array([[1.0, 3.0, 3.0, 2.0]]))
    assert vals[0] == 3.0 and idx[0] == 1


def test_row_max_respects_mask():
    vals, idx = T.row_max(np.array([[1.0, 5.0, 2.0]]), np.array([[True, False, True]]))
    assert vals[0] == 2.0 and idx[0] == 2


def test_row_max_backward_routes_to_argmax():
    g = T.row_max_backward(np.array([2.5]), np.array([1]), 3)
    np.testing.assert_array_equal(g, [[0.0, 2.5, 0.0]])


def test_gelu_erf_form():
    x = np.array([-2.0, -0.5, 0.0, 0.7, 3.0])
    expected = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
    np.testing.assert_allclose(T.gelu(x), expected, atol=1e-15)


def test_relu_and_grad():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.relu(x), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.relu_grad(x), [0.0, 0.0, 1.0])


def test_feed_forward_shapes(rng):
    p = T.FeedForwardParams(rng.normal(size=(4, 16)), np.zeros(16), rng.normal(size=(16, 4)), np.zeros(4))
    assert p.dim == 4 and p.hidden == 16
    assert T.feed_forward(rng.normal(size=(2, 3, 4)), p).shape == (2, 3, 4)


def test_cosine_basic_and_clipped():
    a = np.array([[1.0, 0.0], [1.0, 1.0]])
    b = np.array([[2.0, 0.0], [-3.0, -3.0]])
    np.testing.assert_allclose(T.cosine(a, b), [1.0, -1.0], atol=1e-15)
    assert np.all(np.abs(T.cosine(a, 1e8 * a)) <= 1.0)


def test_cosine_zero_vector_raises():
    with pytest.raises(DegenerateInputError):
        T.cosine(np.zeros(3), np.ones(3))


def test_dot_backward(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    ds = np.array([1.0, -2.0])
    da, db = T.dot_backward(ds, a, b)
    np.testing.assert_allclose(da, ds[:, None] * b)
    np.testing.assert_allclose(db, ds[:, None] * a)
