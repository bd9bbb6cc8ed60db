import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kitbench.errors import DomainError, ShapeError, TrainingError
from kitbench.nn import (
    Autoencoder,
    DenseLayer,
    RmseAgainst,
    autoencoder_forward,
    backprop_params,
    dense_forward,
    finite_difference_gradient,
    input_gradient,
    reconstruction_rmse,
    rmse_gradient,
    sgd_step,
    sigmoid,
)

finite = st.floats(-50, 50, allow_nan=False)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


# dense_forward

def test_identity_layer_passes_input_through():
    layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
    np.testing.assert_array_equal(dense_forward(layer, [0.2, 0.7]), [0.2, 0.7])


def test_zero_sigmoid_layer_outputs_half():
    layer = DenseLayer(np.zeros((3, 4)), np.zeros(3))
    np.testing.assert_array_equal(dense_forward(layer, [9.0, -3.0, 1.0, 0.0]), [0.5] * 3)


def test_hand_arithmetic_layer():
    layer = DenseLayer([[2, 0], [0, 3]], [1, 1], "identity")
    np.testing.assert_array_equal(dense_forward(layer, [1, 1]), [3, 4])


def test_layer_shape_errors():
    layer = DenseLayer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError):
        dense_forward(layer, [1.0, 2.0])
    with pytest.raises(ShapeError):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(DomainError):
        DenseLayer([[np.nan]], [0.0])


@given(arrays(float, 6, elements=st.floats(-10, 10)))
def test_sigmoid_layer_output_in_open_unit_interval(x):
    # Pre-activations stay below ~25 here, far from where doubles round to 1.
    rng = np.random.default_rng(0)
    out = dense_forward(DenseLayer.random(6, 4, rng), x)
    assert np.all(out > 0) and np.all(out < 1)


def test_sigmoid_is_overflow_safe():
    with np.errstate(over="raise"):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


def test_random_init_bounds_and_zero_bias():
    layer = DenseLayer.random(16, 5, np.random.default_rng(3))
    assert np.all(np.abs(layer.weights) <= 0.25)
    assert np.all(layer.biases == 0)


# autoencoder

def test_identity_autoencoder_reconstructs():
    enc = DenseLayer(np.eye(1), np.zeros(1), "identity")
    dec = DenseLayer(np.eye(1), np.zeros(1), "identity")
    ae = Autoencoder(enc, dec)
    np.testing.assert_array_equal(autoencoder_forward(ae, [2.5]), [2.5])


def test_zero_weight_sigmoid_autoencoder_by_hand():
    # 2 -> 1 -> 2, all weights zero, decoder biases b: output is sigmoid(b).
    enc = DenseLayer(np.zeros((1, 2)), np.zeros(1))
    dec = DenseLayer(np.zeros((2, 1)), [0.0, math.log(3.0)])
    out = autoencoder_forward(Autoencoder(enc, dec), [0.3, 0.9])
    np.testing.assert_allclose(out, [0.5, 0.75], rtol=0, atol=1e-15)


def test_autoencoder_rejects_wide_hidden_layer():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        Autoencoder.random(3, 3, rng)
    Autoencoder.random(1, 1, rng)  # a single input may keep a single hidden unit


def test_trained_autoencoder_reconstructs_constant_input():
    rng = np.random.default_rng(1)
    ae = Autoencoder.random(3, 2, rng)
    c = np.array([0.2, 0.5, 0.8])
    # The RMSE gradient has unit scale, so a fixed rate only reaches a band of
    # width ~lr around the optimum; step the rate down to converge.
    for lr in (0.5, 0.05, 0.005):
        for _ in range(20000):
            ae.set_params(sgd_step(ae.params(), backprop_params(ae, c).param_grads, lr))
    np.testing.assert_allclose(autoencoder_forward(ae, c), c, atol=1e-3)


# RMSE

def test_rmse_examples():
    assert reconstruction_rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert reconstruction_rmse([1, 0], [0, 0]) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert reconstruction_rmse([3], [1]) == 2.0


def test_rmse_errors():
    with pytest.raises(DomainError):
        reconstruction_rmse([], [])
    with pytest.raises(ShapeError):
        reconstruction_rmse([1.0], [1.0, 2.0])


grid = st.integers(-4000, 4000).map(lambda i: i / 64)


@given(arrays(float, 5, elements=grid), arrays(float, 5, elements=grid))
def test_rmse_nonnegative_and_zero_iff_equal(x, y):
    e = reconstruction_rmse(x, y)
    assert e >= 0
    assert (e == 0) == bool(np.all(x == y))


def test_rmse_gradient_hand_value():
    # x / (n * RMSE) with n = 2 and RMSE = sqrt(12.5)
    x = np.array([3.0, 4.0])
    expected = x / (2 * math.sqrt(12.5))
    g = input_gradient(RmseAgainst(np.zeros(2)), x)
    np.testing.assert_allclose(g, expected, rtol=1e-15)
    np.testing.assert_allclose(g, [0.42426406871192845, 0.565685424949238], rtol=1e-15)
    np.testing.assert_allclose(finite_difference_gradient(RmseAgainst(np.zeros(2)), x), g, rtol=1e-8)


def test_rmse_gradient_zero_at_minimum():
    np.testing.assert_array_equal(rmse_gradient([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])


# backprop

def test_backprop_zero_when_reconstruction_exact():
    enc = DenseLayer([[1.0]], [0.0], "identity")
    dec = DenseLayer([[1.0]], [0.0], "identity")
    b = backprop_params(Autoencoder(enc, dec), [2.0])
    assert b.value == 0.0
    for g in b.param_grads + [b.input_grad]:
        assert np.all(g == 0)


def _numeric_param_grads(ae, x):
    out = []
    for p in ae.params():
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]

            def f(v):
                p[idx] = v[0]
                val = reconstruction_rmse(x, autoencoder_forward(ae, x))
                p[idx] = orig
                return val

            g[idx] = finite_difference_gradient(f, [orig])[0]
        out.append(g)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ae = Autoencoder.random(4, 3, rng)
    x = rng.uniform(-0.5, 1.5, 4)
    b = backprop_params(ae, x)
    for analytic, numeric in zip(b.param_grads, _numeric_param_grads(ae, x)):
        assert rel_err(analytic, numeric) <= 1e-5
    num_x = finite_difference_gradient(lambda v: reconstruction_rmse(v, autoencoder_forward(ae, v)), x)
    assert rel_err(b.input_grad, num_x) <= 1e-5


def test_gradient_bundle_shapes_mirror_network():
    ae = Autoencoder.random(5, 3, np.random.default_rng(0))
    b = backprop_params(ae, np.linspace(0, 1, 5))
    assert [g.shape for g in b.param_grads] == [p.shape for p in ae.params()]
    assert b.input_grad.shape == (5,)


# input_gradient / finite differences

class _Const:
    def __call__(self, x):
        return 4.0

    def gradient(self, x):
        return np.zeros_like(x)


def test_input_gradient_of_constant_is_zero():
    np.testing.assert_array_equal(input_gradient(_Const(), [1.0, 2.0]), [0.0, 0.0])


def test_input_gradient_shape_check():
    class Bad:
        def gradient(self, x):
            return np.zeros(3)

    with pytest.raises(ShapeError):
        input_gradient(Bad(), [1.0, 2.0])


def test_finite_difference_linear_and_square():
    a = np.array([0.5, -2.0, 3.0])
    np.testing.assert_allclose(finite_difference_gradient(lambda x: a @ x, [1.0, 2.0, 3.0]), a, atol=1e-8)
    assert finite_difference_gradient(lambda x: x[0] ** 2, [3.0])[0] == pytest.approx(6.0, abs=1e-6)
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, [1.0], h=0)


# sgd

def test_sgd_examples():
    assert sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)[0] == pytest.approx(0.8)
    p = [np.array([1.0, -3.0])]
    np.testing.assert_array_equal(sgd_step(p, [np.zeros(2)], 0.3)[0], p[0])


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_sgd_with_zero_rate_is_identity(p, g):
    np.testing.assert_array_equal(sgd_step([p], [g], 0.0)[0], p)


def test_sgd_converges_on_quadratic():
    # f(t) = (t - 3)^2, minimum at 3
    t = [np.array(-4.0)]
    for _ in range(200):
        t = sgd_step(t, [2 * (t[0] - 3.0)], 0.1)
    assert abs(float(t[0]) - 3.0) <= 1e-6


def test_sgd_rejects_non_finite_gradient_and_negative_rate():
    with pytest.raises(TrainingError):
        sgd_step([np.zeros(2)], [np.array([np.inf, 0.0])], 0.1)
    with pytest.raises(TrainingError):
        sgd_step([np.zeros(2)], [np.zeros(2)], -0.1)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_random_network_gradient_property(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    ae = Autoencoder.random(d, max(1, d - 1), rng)
    x = rng.uniform(-1, 2, d)
    b = backprop_params(ae, x)
    if b.value <= 1e-6:
        return
    num = finite_difference_gradient(lambda v: reconstruction_rmse(v, autoencoder_forward(ae, v)), x)
    assert rel_err(b.input_grad, num) <= 1e-5
