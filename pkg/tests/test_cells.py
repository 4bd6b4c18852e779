from collections import OrderedDict

import numpy as np
import pytest

from hornn_lab.cells import (
    CellConfig,
    CellKind,
    CellParams,
    StepContext,
    hornn_step,
    hornnp_step,
    init_cell_params,
    lstm_step,
    lstmp_step,
    parse_kind,
    resrnn_step,
    rnn_step,
    step_forward,
    tensor_shapes,
)
from hornn_lab.errors import ConfigError, ShapeError
from hornn_lab.math_core import seeded_rng, sigmoid


def make(config: CellConfig, **given) -> CellParams:
    """Params with the named tensors set and everything else zero."""
    tensors = OrderedDict()
    for name, shape in tensor_shapes(config).items():
        if name in given:
            tensors[name] = np.asarray(given[name], dtype=np.float64).reshape(shape)
        elif name == "beta":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return CellParams(config, tensors)


def rand_params(config: CellConfig, seed: int = 5, scale: float = 0.4) -> CellParams:
    return init_cell_params(config, seeded_rng(seed), scale)


# ---------------------------------------------------------------------------
# rnn
# ---------------------------------------------------------------------------

def test_rnn_scalar_sigmoid_zero_input():
    cfg = CellConfig(kind="rnn", d_x=1, d_h=1)
    p = make(cfg, W=[1.0])
    h = rnn_step(p, StepContext(x=np.array([0.0]), h_prev=np.array([0.0])))
    assert h[0] == 0.5


def test_rnn_scalar_sigmoid_cancelling_bias():
    cfg = CellConfig(kind="rnn", d_x=1, d_h=1)
    p = make(cfg, W=[1.0], U=[1.0], b=[-2.0])
    h = rnn_step(p, StepContext(x=np.array([1.0]), h_prev=np.array([1.0])))
    assert h[0] == 0.5


def test_rnn_relu_negative_preactivation():
    cfg = CellConfig(kind="rnn", d_x=1, d_h=1, activation="relu")
    p = make(cfg, W=[1.0], b=[-3.0])
    h = rnn_step(p, StepContext(x=np.array([0.0]), h_prev=np.array([0.0])))
    assert h[0] == 0.0


# ---------------------------------------------------------------------------
# hornn
# ---------------------------------------------------------------------------

def test_hornn_relu_scalar_hand_sum():
    cfg = CellConfig(kind="hornn_relu", d_x=1, d_h=1, n=2)
    p = make(cfg, W=[1.0], U1=[1.0], Un=[1.0])
    h = hornn_step(
        p,
        StepContext(x=np.array([1.0]), h_prev=np.array([2.0]), h_lag_n=np.array([3.0])),
    )
    assert h[0] == 6.0


def test_hornn_un_zero_reduces_to_rnn_bitwise():
    rng = seeded_rng(11)
    hc = CellConfig(kind="hornn_relu", d_x=3, d_h=5, n=3)
    rc = CellConfig(kind="rnn", d_x=3, d_h=5, activation="relu")
    hp = rand_params(hc)
    hp.tensors["Un"][...] = 0.0
    rp = make(rc, W=hp.tensors["W"], U=hp.tensors["U1"], b=hp.tensors["b"])
    x = rng.standard_normal((4, 3))
    h_prev = rng.standard_normal((4, 5))
    h_lag = rng.standard_normal((4, 5))
    out_h = step_forward(hp, x, h_prev=h_prev, h_lag_n=h_lag).h
    out_r = step_forward(rp, x, h_prev=h_prev).h
    assert np.array_equal(out_h, out_r)


def test_hornn_sigmoid_zero_preactivation():
    cfg = CellConfig(kind="hornn_sigmoid", d_x=2, d_h=3)
    p = make(cfg)
    h = hornn_step(
        p,
        StepContext(
            x=np.zeros(2), h_prev=np.zeros(3), h_lag_n=np.zeros(3), h_lag_m=np.zeros(3)
        ),
    )
    assert np.array_equal(h, np.full(3, 0.5))


def test_hornn_sigmoid_shortcut_enters_unweighted():
    cfg = CellConfig(kind="hornn_sigmoid", d_x=1, d_h=1, n=2, m=1)
    p = make(cfg)
    delta = 0.73
    h = hornn_step(
        p,
        StepContext(
            x=np.zeros(1),
            h_prev=np.zeros(1),
            h_lag_n=np.zeros(1),
            h_lag_m=np.array([delta]),
        ),
    )
    assert abs(h[0] - sigmoid(np.array(delta))) < 1e-15


# ---------------------------------------------------------------------------
# hornnp
# ---------------------------------------------------------------------------

def test_hornnp_scalar_hand_arithmetic():
    cfg = CellConfig(kind="hornnp_relu", d_x=1, d_h=1, d_p=1, n=2)
    p = make(cfg, Up1=[1.0], P=[2.0])
    h_prev = np.array([1.0])
    p_prev = p.tensors["P"] @ h_prev
    h, p_t = hornnp_step(
        p,
        StepContext(x=np.array([0.0]), p_prev=p_prev, p_lag_n=np.zeros(1)),
    )
    assert h[0] == 2.0
    assert p_t[0] == 4.0


def test_hornnp_zero_history_sigmoid_is_sigmoid_of_wx():
    cfg = CellConfig(kind="hornnp_sigmoid", d_x=3, d_h=4, d_p=2)
    p = rand_params(cfg)
    x = seeded_rng(3).standard_normal(3)
    h, _ = hornnp_step(
        p,
        StepContext(
            x=x, p_prev=np.zeros(2), p_lag_n=np.zeros(2), h_lag_m=np.zeros(4)
        ),
    )
    expected = sigmoid(p.tensors["W"] @ x + p.tensors["b"])
    assert np.allclose(h, expected, atol=1e-15)


@pytest.mark.parametrize("kind,flat", [("hornnp_relu", "hornn_relu"), ("hornnp_sigmoid", "hornn_sigmoid")])
def test_hornnp_projection_collapse(kind, flat):
    d_h = 5
    rng = seeded_rng(9)
    flat_cfg = CellConfig(kind=flat, d_x=3, d_h=d_h, n=2)
    fp = rand_params(flat_cfg, seed=21)
    proj_cfg = CellConfig(kind=kind, d_x=3, d_h=d_h, d_p=d_h, n=2)
    pp = make(
        proj_cfg,
        W=fp.tensors["W"],
        Up1=fp.tensors["U1"],
        Upn=fp.tensors["Un"],
        b=fp.tensors["b"],
        P=np.eye(d_h),
    )
    B = 4
    x = rng.standard_normal((B, 3))
    h_prev = rng.standard_normal((B, d_h))
    h_lag = rng.standard_normal((B, d_h))
    h_m = rng.standard_normal((B, d_h))
    flat_out = step_forward(fp, x, h_prev=h_prev, h_lag_n=h_lag, h_lag_m=h_m).h
    proj_out = step_forward(pp, x, p_prev=h_prev, p_lag_n=h_lag, h_lag_m=h_m)
    assert np.allclose(proj_out.h, flat_out, atol=1e-12)
    assert np.allclose(proj_out.p, proj_out.h, atol=1e-12)


# ---------------------------------------------------------------------------
# lstm
# ---------------------------------------------------------------------------

def test_lstm_all_zero():
    cfg = CellConfig(kind="lstm", d_x=2, d_h=3)
    p = make(cfg)
    h, c = lstm_step(p, StepContext(x=np.zeros(2), h_prev=np.zeros(3), c_prev=np.zeros(3)))
    assert np.array_equal(c, np.zeros(3))
    assert np.array_equal(h, np.zeros(3))


def test_lstm_unit_cell_state_hand_arithmetic():
    cfg = CellConfig(kind="lstm", d_x=2, d_h=3)
    p = make(cfg)
    h, c = lstm_step(p, StepContext(x=np.zeros(2), h_prev=np.zeros(3), c_prev=np.ones(3)))
    assert np.allclose(c, np.full(3, 0.5), atol=1e-15)
    assert np.allclose(h, np.full(3, 0.5 * np.tanh(0.5)), atol=1e-15)


def test_lstm_forget_bias_limit():
    cfg = CellConfig(kind="lstm", d_x=1, d_h=1)
    p = make(cfg, Wc=[1.0], bf=[50.0])
    x = np.array([0.7])
    c_prev = np.ones(1)
    h, c = lstm_step(p, StepContext(x=x, h_prev=np.zeros(1), c_prev=c_prev))
    limit = c_prev + 0.5 * np.tanh(0.7)
    assert abs(c[0] - limit[0]) < 1e-9


def test_lstm_input_peephole_reads_previous_cell():
    cfg = CellConfig(kind="lstm", d_x=1, d_h=1)
    p = make(cfg, vi=[2.0], vf=[-1.0], Wc=[1.0])
    c_prev = np.array([0.8])
    x = np.array([0.3])
    h, c = lstm_step(p, StepContext(x=x, h_prev=np.zeros(1), c_prev=c_prev))
    i = sigmoid(np.array(2.0 * 0.8))
    f = sigmoid(np.array(-1.0 * 0.8))
    expected_c = f * 0.8 + i * np.tanh(0.3)
    assert abs(c[0] - expected_c) < 1e-15


def test_lstm_output_peephole_reads_current_cell():
    cfg = CellConfig(kind="lstm", d_x=1, d_h=1)
    p = make(cfg, Wc=[1.0], vo=[3.0])
    x = np.array([0.9])
    h, c = lstm_step(p, StepContext(x=x, h_prev=np.zeros(1), c_prev=np.zeros(1)))
    expected_c = 0.5 * np.tanh(0.9)
    o = sigmoid(np.array(3.0 * expected_c))
    assert abs(c[0] - expected_c) < 1e-15
    assert abs(h[0] - o * np.tanh(expected_c)) < 1e-15


def test_lstmp_projection_collapse():
    d_h = 4
    rng = seeded_rng(13)
    flat = rand_params(CellConfig(kind="lstm", d_x=3, d_h=d_h), seed=31)
    proj_cfg = CellConfig(kind="lstmp", d_x=3, d_h=d_h, d_p=d_h)
    given = {k: v for k, v in flat.tensors.items()}
    given["P"] = np.eye(d_h)
    pp = make(proj_cfg, **given)
    B = 3
    x = rng.standard_normal((B, 3))
    h_prev = rng.standard_normal((B, d_h))
    c_prev = rng.standard_normal((B, d_h))
    f_out = step_forward(flat, x, h_prev=h_prev, c_prev=c_prev)
    p_out = step_forward(pp, x, p_prev=h_prev, c_prev=c_prev)
    assert np.allclose(p_out.h, f_out.h, atol=1e-12)
    assert np.allclose(p_out.c, f_out.c, atol=1e-12)


def test_lstmp_zero_weights_gives_zero_h():
    cfg = CellConfig(kind="lstmp", d_x=2, d_h=3, d_p=2)
    p = make(cfg)
    h, c, p_t = lstmp_step(
        p, StepContext(x=np.ones(2), p_prev=np.zeros(2), c_prev=np.zeros(3))
    )
    assert np.array_equal(h, np.zeros(3))
    assert np.array_equal(p_t, np.zeros(2))


def test_lstmp_element_count_matches_cost_model():
    from hornn_lab.cost_model import param_count

    cfg = CellConfig(kind="lstmp", d_x=7, d_h=9, d_p=4)
    p = rand_params(cfg)
    assert p.element_count() == param_count(cfg)


# ---------------------------------------------------------------------------
# resrnn
# ---------------------------------------------------------------------------

def test_resrnn_relu_passthrough():
    cfg = CellConfig(kind="resrnn", d_x=1, d_h=1, activation="relu")
    p = make(cfg, W=[1.0], Ud2=[1.0])
    x = np.array([5.0])
    h = resrnn_step(p, StepContext(x=x, h_prev=np.zeros(1), h_lag_m=np.zeros(1)))
    assert h[0] == 5.0


def test_resrnn_sigmoid_inner_zero():
    cfg = CellConfig(kind="resrnn", d_x=2, d_h=3)
    p = make(cfg, Ud2=0.8 * np.eye(3))
    h = resrnn_step(p, StepContext(x=np.zeros(2), h_prev=np.zeros(3), h_lag_m=np.zeros(3)))
    assert np.allclose(h, sigmoid(np.full(3, 0.8 * 0.5)), atol=1e-15)


def test_resrnn_shortcut_is_additive_shift():
    cfg = CellConfig(kind="resrnn", d_x=2, d_h=3)
    p = rand_params(cfg, seed=8)
    x = seeded_rng(2).standard_normal(2)
    h_prev = seeded_rng(4).standard_normal(3)
    delta = np.array([0.3, -0.2, 0.9])
    with_m = resrnn_step(p, StepContext(x=x, h_prev=h_prev, h_lag_m=delta))
    inner = sigmoid(p.tensors["W"] @ x + p.tensors["Ud1"] @ h_prev + p.tensors["b"])
    expected = sigmoid(p.tensors["Ud2"] @ inner + delta)
    assert np.allclose(with_m, expected, atol=1e-15)


# ---------------------------------------------------------------------------
# shared structural behavior
# ---------------------------------------------------------------------------

ALL_KINDS = [
    ("rnn", 0), ("lstm", 0), ("lstmp", 2), ("hornn_relu", 0),
    ("hornn_sigmoid", 0), ("hornnp_relu", 2), ("hornnp_sigmoid", 2), ("resrnn", 0),
]


def full_context(cfg: CellConfig, rng) -> dict:
    kw = {}
    if cfg.kind.projected:
        kw["p_prev"] = rng.standard_normal((2, cfg.d_p))
        if cfg.kind.uses_lag_n:
            kw["p_lag_n"] = rng.standard_normal((2, cfg.d_p))
    else:
        kw["h_prev"] = rng.standard_normal((2, cfg.d_h))
        if cfg.kind.uses_lag_n:
            kw["h_lag_n"] = rng.standard_normal((2, cfg.d_h))
    if cfg.kind.uses_lag_m:
        kw["h_lag_m"] = rng.standard_normal((2, cfg.d_h))
    if cfg.kind.is_lstm:
        kw["c_prev"] = rng.standard_normal((2, cfg.d_h))
    return kw


@pytest.mark.parametrize("kind,dp", ALL_KINDS)
def test_step_purity(kind, dp):
    cfg = CellConfig(kind=kind, d_x=3, d_h=4, d_p=dp)
    p = rand_params(cfg)
    rng = seeded_rng(77)
    x = rng.standard_normal((2, 3))
    kw = full_context(cfg, rng)
    first = step_forward(p, x, **kw)
    second = step_forward(p, x, **kw)
    assert np.array_equal(first.h, second.h)
    if first.p is not None:
        assert np.array_equal(first.p, second.p)
    if first.c is not None:
        assert np.array_equal(first.c, second.c)


@pytest.mark.parametrize("kind,dp", ALL_KINDS)
def test_step_does_not_mutate_inputs(kind, dp):
    cfg = CellConfig(kind=kind, d_x=3, d_h=4, d_p=dp)
    p = rand_params(cfg)
    rng = seeded_rng(78)
    x = rng.standard_normal((2, 3))
    kw = full_context(cfg, rng)
    x0 = x.copy()
    kw0 = {k: v.copy() for k, v in kw.items()}
    tensors0 = {k: v.copy() for k, v in p.tensors.items()}
    step_forward(p, x, **kw)
    assert np.array_equal(x, x0)
    for k in kw:
        assert np.array_equal(kw[k], kw0[k])
    for k in tensors0:
        assert np.array_equal(p.tensors[k], tensors0[k])


def test_boundary_step_matches_lag_free_rnn():
    # with zero history everywhere, a first step sees no lag contribution
    cfg = CellConfig(kind="hornn_sigmoid", d_x=3, d_h=4, n=2, m=1)
    hp = rand_params(cfg, seed=15)
    rc = CellConfig(kind="rnn", d_x=3, d_h=4)
    rp = make(rc, W=hp.tensors["W"], U=hp.tensors["U1"], b=hp.tensors["b"])
    x = seeded_rng(16).standard_normal((3, 3))
    zero = np.zeros((3, 4))
    h_h = step_forward(hp, x, h_prev=zero, h_lag_n=zero, h_lag_m=zero).h
    h_r = step_forward(rp, x, h_prev=zero).h
    assert np.array_equal(h_h, h_r)


# ---------------------------------------------------------------------------
# config and params plumbing
# ---------------------------------------------------------------------------

def test_parse_kind_aliases():
    assert parse_kind("hornn") is CellKind.HORNN_RELU
    assert parse_kind("hornn-sigmoid") is CellKind.HORNN_SIGMOID
    assert parse_kind("res-rnn") is CellKind.RES_RNN
    assert parse_kind("LSTMP") is CellKind.LSTMP
    with pytest.raises(ConfigError):
        parse_kind("gru")


def test_config_rejects_n_of_one():
    with pytest.raises(ConfigError):
        CellConfig(kind="hornn_relu", d_x=3, d_h=4, n=1)


def test_config_requires_projection_dim():
    with pytest.raises(ConfigError):
        CellConfig(kind="hornnp_relu", d_x=3, d_h=4, d_p=0)
    with pytest.raises(ConfigError):
        CellConfig(kind="rnn", d_x=3, d_h=4, d_p=2)


def test_config_lstm_activation_fixed():
    with pytest.raises(ConfigError):
        CellConfig(kind="lstm", d_x=3, d_h=4, activation="relu")


def test_config_dict_round_trip():
    cfg = CellConfig(kind="hornnp_sigmoid", d_x=3, d_h=8, d_p=4, n=3, m=2)
    again = CellConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_params_shape_validation():
    cfg = CellConfig(kind="rnn", d_x=3, d_h=4)
    tensors = OrderedDict(
        W=np.zeros((4, 3)), U=np.zeros((4, 5)), b=np.zeros(4)
    )
    with pytest.raises(ShapeError):
        CellParams(cfg, tensors)


def test_params_name_validation():
    cfg = CellConfig(kind="rnn", d_x=3, d_h=4)
    tensors = OrderedDict(W=np.zeros((4, 3)), V=np.zeros((4, 4)), b=np.zeros(4))
    with pytest.raises(ConfigError):
        CellParams(cfg, tensors)


def test_init_bounds_and_determinism():
    cfg = CellConfig(kind="lstm", d_x=6, d_h=8)
    a = init_cell_params(cfg, seeded_rng(5), scale=0.05)
    b = init_cell_params(cfg, seeded_rng(5), scale=0.05)
    for name in a.tensors:
        assert np.array_equal(a.tensors[name], b.tensors[name])
        assert np.abs(a.tensors[name]).max() <= 0.05


def test_psigmoid_beta_initialized_to_ones_and_counted_separately():
    cfg = CellConfig(kind="rnn", d_x=3, d_h=4, activation="psigmoid")
    p = init_cell_params(cfg, seeded_rng(1))
    assert np.array_equal(p.beta, np.ones(4))
    assert p.element_count() == 4 * 3 + 4 * 4 + 4
    assert p.element_count(include_activation=True) == p.element_count() + 4
