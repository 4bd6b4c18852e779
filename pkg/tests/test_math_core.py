import numpy as np
import pytest

from hornn_lab.errors import ConfigError, ShapeError
from hornn_lab.math_core import (
    ActivationKind,
    activate,
    activate_grad,
    gemv,
    require_finite,
    seeded_rng,
    seeded_uniform,
    sigmoid,
)


def test_sigmoid_known_values():
    assert sigmoid(np.array(0.0)) == 0.5
    assert abs(sigmoid(np.array(2.0)) - 1.0 / (1.0 + np.exp(-2.0))) < 1e-15
    # extreme arguments stay finite and saturate cleanly
    assert sigmoid(np.array(800.0)) == 1.0
    assert sigmoid(np.array(-800.0)) == 0.0


def test_sigmoid_derivative_peak():
    a = np.linspace(-6, 6, 241)
    g = activate_grad(ActivationKind.SIGMOID, a)
    assert g.max() <= 0.25 + 1e-15
    assert abs(activate_grad(ActivationKind.SIGMOID, np.array(0.0)) - 0.25) < 1e-15


def test_relu_and_grad():
    a = np.array([-3.0, -1e-12, 0.0, 1e-12, 2.5])
    assert np.array_equal(activate(ActivationKind.RELU, a), np.array([0.0, 0.0, 0.0, 1e-12, 2.5]))
    g = activate_grad(ActivationKind.RELU, a)
    assert np.array_equal(g, np.array([0.0, 0.0, 0.0, 1.0, 1.0]))


def test_tanh_matches_numpy():
    a = np.linspace(-4, 4, 17)
    assert np.allclose(activate(ActivationKind.TANH, a), np.tanh(a), atol=0)
    assert np.allclose(activate_grad(ActivationKind.TANH, a), 1 - np.tanh(a) ** 2, atol=1e-15)


def test_psigmoid_scales_sigmoid():
    a = np.array([-1.0, 0.0, 2.0])
    beta = np.array([2.0, 3.0, 0.5])
    out = activate(ActivationKind.PSIGMOID, a, beta)
    assert np.allclose(out, beta * sigmoid(a), atol=0)
    g = activate_grad(ActivationKind.PSIGMOID, a, beta)
    s = sigmoid(a)
    assert np.allclose(g, beta * s * (1 - s), atol=1e-15)


def test_psigmoid_beta_ones_is_sigmoid():
    a = np.linspace(-3, 3, 7)
    assert np.array_equal(
        activate(ActivationKind.PSIGMOID, a, np.ones(7)),
        activate(ActivationKind.SIGMOID, a),
    )


def test_psigmoid_requires_beta():
    with pytest.raises((ConfigError, ShapeError)):
        activate(ActivationKind.PSIGMOID, np.zeros(3))


def test_psigmoid_beta_shape_checked():
    with pytest.raises((ConfigError, ShapeError)):
        activate(ActivationKind.PSIGMOID, np.zeros(3), np.ones(4))


def test_gemv_matches_manual():
    m = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    v = np.array([10.0, -1.0])
    assert np.array_equal(gemv(m, v), np.array([8.0, 26.0, 44.0]))


def test_gemv_shape_mismatch():
    with pytest.raises(ShapeError):
        gemv(np.zeros((3, 2)), np.zeros(3))


def test_seeded_rng_reproducible():
    a = seeded_rng(42).standard_normal(8)
    b = seeded_rng(42).standard_normal(8)
    c = seeded_rng(43).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_seeded_uniform_bounds_and_determinism():
    m1 = seeded_uniform(20, 30, -0.05, 0.05, seed=7)
    m2 = seeded_uniform(20, 30, -0.05, 0.05, seed=7)
    assert m1.shape == (20, 30)
    assert np.array_equal(m1, m2)
    assert m1.min() >= -0.05 and m1.max() < 0.05


def test_require_finite_raises():
    require_finite(np.ones(3), "ok")
    from hornn_lab.errors import NumericError

    with pytest.raises(NumericError):
        require_finite(np.array([1.0, np.nan]), "bad")
    with pytest.raises(NumericError):
        require_finite(np.array([np.inf]), "bad")
