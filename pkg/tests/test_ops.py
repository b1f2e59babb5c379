import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from endn import ops
from endn.errors import ConfigError, ShapeError
from endn.tensor import Tape

from oracles import central_diff, conv2d_loops, rel_err

# x * sigmoid(x) and x * tanh(log1p(e^x)) at x = 1, 30 digits via mpmath
SWISH_1 = 0.731058578630005
MISH_1 = 0.865098388267310


def _grads(fn, *arrays):
    with Tape() as tape:
        ts = [tape.watch(a) for a in arrays]
        loss = fn(*ts)
    return tape.gradient(loss, ts)


# ------------------------------------------------------------------ conv2d

def test_conv_1x1_identity(rng):
    x = rng.standard_normal((2, 1, 5, 4))
    out = ops.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_center_tap_identity(rng):
    x = rng.standard_normal((1, 1, 6, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(ops.conv2d(x, w, np.zeros(1)).data, x)


def test_conv_ones_center_and_corner():
    out = ops.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1)).data[0, 0]
    assert out[1, 1] == 9
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4


@pytest.mark.parametrize("k,d", [(1, 1), (3, 1), (5, 1), (7, 1), (3, 2), (5, 3)])
def test_conv_matches_loop_oracle(rng, k, d):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(ops.conv2d(x, w, b, d).data, conv2d_loops(x, w, b, d), rtol=1e-12, atol=1e-12)


def test_conv_errors(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    with pytest.raises(ConfigError):
        ops.conv2d(x, np.zeros((1, 2, 2, 2)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv2d(x, np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv2d(x, np.zeros((1, 2, 3, 3)), np.zeros(2))


def test_conv_backward_zero_and_identity(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    g = ops.conv2d_backward(np.zeros((1, 3, 4, 4)), {"input": x, "weight": w, "dilation": 1})
    assert not any(np.any(v) for v in g.values())
    G = rng.standard_normal((1, 1, 4, 4))
    g = ops.conv2d_backward(G, {"input": x[:, :1], "weight": np.ones((1, 1, 1, 1)), "dilation": 1})
    np.testing.assert_array_equal(g["grad_input"], G)
    np.testing.assert_allclose(g["grad_bias"], [G.sum()])
    with pytest.raises(ShapeError):
        ops.conv2d_backward(np.zeros((1, 3, 5, 4)), {"input": x, "weight": w})


def test_conv_backward_matches_finite_differences(rng):
    x = rng.standard_normal((2, 1, 4, 4))
    w = rng.standard_normal((3, 1, 3, 3))
    b = rng.standard_normal(3)
    proj = rng.standard_normal((2, 3, 4, 4))
    f = lambda: float(np.sum(ops.conv2d(x, w, b).data * proj))  # noqa: E731
    g = ops.conv2d_backward(proj, {"input": x, "weight": w, "dilation": 1})
    assert rel_err(g["grad_input"], central_diff(f, x)) < 1e-6
    assert rel_err(g["grad_weight"], central_diff(f, w)) < 1e-6
    assert rel_err(g["grad_bias"], central_diff(f, b)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 3, 5, 7]), st.integers(1, 3),
       st.floats(-3, 3), st.floats(-3, 3))
def test_conv_linearity(seed, k, d, a, b):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((2, 1, 2, 6, 5))
    w = rng.standard_normal((3, 2, k, k))
    z = np.zeros(3)
    lhs = ops.conv2d(a * X + b * Y, w, z, d).data
    rhs = a * ops.conv2d(X, w, z, d).data + b * ops.conv2d(Y, w, z, d).data
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() / scale < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 13), st.integers(1, 13), st.sampled_from([1, 3, 5, 7]), st.integers(1, 3))
def test_conv_preserves_spatial_dims(h, w, k, d):
    out = ops.conv2d(np.ones((1, 2, h, w)), np.ones((4, 2, k, k)), np.zeros(4), d)
    assert out.shape == (1, 4, h, w)


# ------------------------------------------------------------- elementwise

def test_activation_values():
    v = lambda fn, x: fn(np.array([[[[x]]]])).item()  # noqa: E731
    assert v(ops.relu, -1.0) == 0 and v(ops.relu, 2.0) == 2
    assert v(ops.swish, 0.0) == 0 and v(ops.mish, 0.0) == 0
    assert abs(v(ops.swish, 1.0) - SWISH_1) < 1e-12
    assert abs(v(ops.mish, 1.0) - MISH_1) < 1e-12
    assert abs(v(ops.swish, 1.0) - 0.7310586) < 1e-6
    assert abs(v(ops.mish, 1.0) - 0.8650984) < 1e-6


def test_softplus_overflow_safe():
    x = np.array([[[[25.0, 800.0, -800.0]]]])
    out = ops.softplus(x).data.ravel()
    assert out[0] == 25.0 and out[1] == 800.0 and out[2] == 0.0
    assert np.all(np.isfinite(ops.mish(x).data))
    assert np.all(np.isfinite(_grads(lambda t: ops.sum_all(ops.mish(t)), x)[0]))


def test_add_dim_mismatch():
    with pytest.raises(ShapeError):
        ops.add(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 3)))


def test_elementwise_dispatch():
    x = np.array([[[[-1.0, 2.0]]]])
    np.testing.assert_array_equal(ops.elementwise("relu", x).data, [[[[0.0, 2.0]]]])
    np.testing.assert_array_equal(ops.elementwise("add", x, x).data, 2 * x)
    np.testing.assert_array_equal(ops.elementwise("mul-by-scalar", x, scalar=3.0).data, 3 * x)
    with pytest.raises(ConfigError):
        ops.elementwise("gelu", x)


finite = arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-6, 6).filter(lambda v: abs(v) > 1e-3))


@settings(max_examples=20, deadline=None)
@given(finite, st.sampled_from(["relu", "swish", "mish", "sigmoid", "tanh", "softplus"]))
def test_activation_gradients(x, name):
    x = x.copy()
    fn = ops.ACTIVATIONS[name]
    analytic = _grads(lambda t: ops.sum_all(fn(t)), x)[0]
    numeric = central_diff(lambda: float(fn(x).data.sum()), x)
    assert rel_err(analytic, numeric) < 1e-6


@settings(max_examples=20, deadline=None)
@given(finite)
def test_activations_preserve_shape(x):
    for fn in ops.ACTIVATIONS.values():
        assert fn(x).shape == x.shape


# ------------------------------------------------------------------ concat

def test_concat_single_is_identity(rng):
    a = rng.standard_normal((1, 2, 3, 3))
    np.testing.assert_array_equal(ops.concat_channels([a]).data, a)


def test_concat_order_and_dims(rng):
    a, b = rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 3, 2, 2))
    out = ops.concat_channels([a, b]).data
    assert out.shape == (1, 5, 2, 2)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)


def test_concat_sum_gradient_is_ones(rng):
    a, b = rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 3, 2, 2))
    ga, gb = _grads(lambda p, q: ops.sum_all(ops.concat_channels([p, q])), a, b)
    np.testing.assert_array_equal(ga, np.ones_like(a))
    np.testing.assert_array_equal(gb, np.ones_like(b))
    f = lambda: float(ops.concat_channels([a, b]).data.sum())  # noqa: E731
    assert rel_err(ga, central_diff(f, a)) < 1e-9


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        ops.concat_channels([np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 2))])
