"""The cell zoo: per-architecture forward steps and their hand-written backward steps.

Eight recurrent cell kinds are supported:

* ``rnn``            h_t = f(W x_t + U h_{t-1} + b)
* ``hornn_relu``     h_t = f(W x_t + U1 h_{t-1} + Un h_{t-n} + b)
* ``hornn_sigmoid``  h_t = f(W x_t + U1 h_{t-1} + Un h_{t-n} + h_{t-m} + b)
* ``hornnp_relu``    h_t = f(W x_t + Up1 P h_{t-1} + Upn P h_{t-n} + b),       p_t = P h_t
* ``hornnp_sigmoid`` h_t = f(W x_t + Up1 P h_{t-1} + Upn P h_{t-n} + h_{t-m} + b)
* ``lstm``           gated memory cell with diagonal peepholes
* ``lstmp``          lstm with the recurrent inputs factorized through P
* ``resrnn``         h_t = f(Ud2 f(W x_t + Ud1 h_{t-1} + b) + h_{t-m})

The lag-m term of the sigmoid high-order kinds enters the pre-activation
unweighted (an identity connection); it contributes no parameters.

All step functions are pure: histories that fall before the start of a
sequence must be supplied as zero vectors by the caller (h_0 = 0 and
earlier states are zero by convention).  The batched ``*_forward`` /
``*_backward`` pairs operate on (B, dim) arrays and return the caches the
backward pass needs; the public ``*_step`` functions are thin single-vector
wrappers over the same code path.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .math_core import ActivationKind, activate, activate_grad, sigmoid


class CellKind(str, Enum):
    RNN = "rnn"
    LSTM = "lstm"
    LSTMP = "lstmp"
    HORNN_RELU = "hornn_relu"
    HORNN_SIGMOID = "hornn_sigmoid"
    HORNNP_RELU = "hornnp_relu"
    HORNNP_SIGMOID = "hornnp_sigmoid"
    RES_RNN = "resrnn"

    @property
    def projected(self) -> bool:
        return self in (CellKind.LSTMP, CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID)

    @property
    def is_lstm(self) -> bool:
        return self in (CellKind.LSTM, CellKind.LSTMP)

    @property
    def uses_lag_n(self) -> bool:
        return self in (
            CellKind.HORNN_RELU,
            CellKind.HORNN_SIGMOID,
            CellKind.HORNNP_RELU,
            CellKind.HORNNP_SIGMOID,
        )

    @property
    def uses_lag_m(self) -> bool:
        return self in (CellKind.HORNN_SIGMOID, CellKind.HORNNP_SIGMOID, CellKind.RES_RNN)


_KIND_ALIASES = {
    "hornn": CellKind.HORNN_RELU,
    "hornnp": CellKind.HORNNP_RELU,
    "hornn-relu": CellKind.HORNN_RELU,
    "hornn-sigmoid": CellKind.HORNN_SIGMOID,
    "hornnp-relu": CellKind.HORNNP_RELU,
    "hornnp-sigmoid": CellKind.HORNNP_SIGMOID,
    "res-rnn": CellKind.RES_RNN,
}


def parse_kind(name: str) -> CellKind:
    """Resolve a cell-kind name, accepting dash/underscore aliases."""
    key = name.strip().lower()
    if key in _KIND_ALIASES:
        return _KIND_ALIASES[key]
    try:
        return CellKind(key)
    except ValueError:
        valid = sorted({k.value for k in CellKind} | set(_KIND_ALIASES))
        raise ConfigError(f"unknown cell kind {name!r}; valid kinds: {', '.join(valid)}") from None


_DEFAULT_LAG_N = {CellKind.HORNN_RELU: 4, CellKind.HORNNP_RELU: 4,
                  CellKind.HORNN_SIGMOID: 2, CellKind.HORNNP_SIGMOID: 2}


@dataclass
class CellConfig:
    """Static description of one recurrent layer.

    ``n`` is the high-order lag (>= 2) of the hornn kinds, ``m`` the shortcut
    lag (>= 1) of the sigmoid hornn kinds and the resrnn.  ``d_p`` must be
    positive exactly for the projected kinds.  Leaving ``n``/``m``/
    ``activation`` as None picks the per-kind defaults (relu hornns n=4,
    sigmoid hornns n=2 m=1, resrnn m=1).
    """

    kind: CellKind
    d_x: int
    d_h: int
    d_p: int = 0
    n: int | None = None
    m: int | None = None
    activation: ActivationKind | None = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = parse_kind(self.kind)
        if isinstance(self.activation, str):
            self.activation = ActivationKind(self.activation)
        if self.d_x <= 0 or self.d_h <= 0:
            raise ConfigError(f"dimensions must be positive, got d_x={self.d_x}, d_h={self.d_h}")
        if self.kind.projected:
            if self.d_p <= 0:
                raise ConfigError(f"kind {self.kind.value} requires d_p > 0, got {self.d_p}")
        elif self.d_p:
            raise ConfigError(f"kind {self.kind.value} does not use a projection, but d_p={self.d_p}")
        if self.kind.uses_lag_n:
            if self.n is None:
                self.n = _DEFAULT_LAG_N[self.kind]
            if self.n < 2:
                raise ConfigError(f"high-order lag n must be >= 2, got n={self.n}")
        else:
            self.n = 0
        if self.kind.uses_lag_m:
            if self.m is None:
                self.m = 1
            if self.m < 1:
                raise ConfigError(f"shortcut lag m must be >= 1, got m={self.m}")
        else:
            self.m = 0
        if self.activation is None:
            self.activation = (
                ActivationKind.RELU
                if self.kind in (CellKind.HORNN_RELU, CellKind.HORNNP_RELU)
                else ActivationKind.SIGMOID
            )
        if self.kind.is_lstm and self.activation is not ActivationKind.SIGMOID:
            raise ConfigError("lstm kinds have fixed internal nonlinearities; activation must be sigmoid")

    @property
    def out_dim(self) -> int:
        """Dimension the layer exposes upward: d_p for projected kinds, else d_h."""
        return self.d_p if self.kind.projected else self.d_h

    @property
    def max_lag(self) -> int:
        return max(1, self.n, self.m)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "d_x": self.d_x,
            "d_h": self.d_h,
            "d_p": self.d_p,
            "n": self.n,
            "m": self.m,
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellConfig":
        return cls(
            kind=parse_kind(d["kind"]),
            d_x=int(d["d_x"]),
            d_h=int(d["d_h"]),
            d_p=int(d.get("d_p", 0)),
            n=None if d.get("n") in (None, 0) else int(d["n"]),
            m=None if d.get("m") in (None, 0) else int(d["m"]),
            activation=ActivationKind(d["activation"]) if d.get("activation") else None,
        )


def tensor_shapes(config: CellConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Named parameter tensors of a cell, in canonical draw order.

    The order matters twice: initialization draws tensors sequentially from
    one seeded stream, and the shared prefix (W, U1, b across rnn / hornn /
    resrnn) makes cross-architecture comparisons seed-matched; serialization
    also writes tensors in this order.
    """
    k, dx, dh, dp = config.kind, config.d_x, config.d_h, config.d_p
    shapes: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    if k is CellKind.RNN:
        shapes["W"] = (dh, dx)
        shapes["U"] = (dh, dh)
        shapes["b"] = (dh,)
    elif k in (CellKind.HORNN_RELU, CellKind.HORNN_SIGMOID):
        shapes["W"] = (dh, dx)
        shapes["U1"] = (dh, dh)
        shapes["b"] = (dh,)
        shapes["Un"] = (dh, dh)
    elif k in (CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID):
        shapes["W"] = (dh, dx)
        shapes["Up1"] = (dh, dp)
        shapes["b"] = (dh,)
        shapes["Upn"] = (dh, dp)
        shapes["P"] = (dp, dh)
    elif k is CellKind.RES_RNN:
        shapes["W"] = (dh, dx)
        shapes["Ud1"] = (dh, dh)
        shapes["b"] = (dh,)
        shapes["Ud2"] = (dh, dh)
    elif k.is_lstm:
        rec = dp if k is CellKind.LSTMP else dh
        for g in ("i", "f", "c", "o"):
            shapes[f"W{g}"] = (dh, dx)
            shapes[f"U{g}"] = (dh, rec)
            shapes[f"b{g}"] = (dh,)
        for g in ("i", "f", "o"):
            shapes[f"v{g}"] = (dh,)  # diagonal peepholes, stored as vectors
        if k is CellKind.LSTMP:
            shapes["P"] = (dp, dh)
    else:  # pragma: no cover
        raise ConfigError(f"unhandled kind {k}")
    if config.activation is ActivationKind.PSIGMOID:
        shapes["beta"] = (dh,)
    return shapes


# tensors that are 2-D weight matrices get weight decay; vectors never do
def is_weight_matrix(name: str, shape: tuple[int, ...]) -> bool:
    return len(shape) == 2


@dataclass
class CellParams:
    """Parameter container for one cell; tensors keyed by canonical names."""

    config: CellConfig
    tensors: "OrderedDict[str, np.ndarray]"

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        if list(expected) != list(self.tensors):
            raise ConfigError(
                f"tensor names {list(self.tensors)} do not match expected {list(expected)}"
            )
        for name, shape in expected.items():
            got = self.tensors[name].shape
            if got != shape:
                raise ShapeError(f"tensor {name}: expected shape {shape}, got {got}")

    def element_count(self, include_activation: bool = False) -> int:
        """Total scalar parameters; the trainable activation scale is counted separately."""
        total = 0
        for name, arr in self.tensors.items():
            if name == "beta" and not include_activation:
                continue
            total += arr.size
        return total

    @property
    def beta(self) -> np.ndarray | None:
        return self.tensors.get("beta")

    def copy(self) -> "CellParams":
        return CellParams(self.config, OrderedDict((k, v.copy()) for k, v in self.tensors.items()))


def init_cell_params(config: CellConfig, rng: np.random.Generator, scale: float = 0.05) -> CellParams:
    """Uniform [-scale, scale) initialization; psigmoid scales start at one."""
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in tensor_shapes(config).items():
        if name == "beta":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = rng.uniform(-scale, scale, size=shape)
    return CellParams(config, tensors)


@dataclass
class StepContext:
    """Inputs to one recurrent step; history entries must be zero-filled, never omitted."""

    x: np.ndarray
    h_prev: np.ndarray | None = None
    h_lag_n: np.ndarray | None = None
    h_lag_m: np.ndarray | None = None
    p_prev: np.ndarray | None = None
    p_lag_n: np.ndarray | None = None
    c_prev: np.ndarray | None = None


@dataclass
class StepOut:
    """Batched step result; ``cache`` carries what the backward step needs."""

    h: np.ndarray
    p: np.ndarray | None = None
    c: np.ndarray | None = None
    cache: dict = field(default_factory=dict)


@dataclass
class StepGrads:
    """Gradients leaving one step: per-tensor dicts plus upstream state grads."""

    params: dict
    d_x: np.ndarray | None = None
    d_h_prev: np.ndarray | None = None
    d_h_lag_n: np.ndarray | None = None
    d_h_lag_m: np.ndarray | None = None
    d_p_prev: np.ndarray | None = None
    d_p_lag_n: np.ndarray | None = None
    d_c_prev: np.ndarray | None = None


def _need(value: np.ndarray | None, name: str, kind: CellKind) -> np.ndarray:
    if value is None:
        raise ShapeError(f"{kind.value} step requires history entry {name!r} (zero-fill, never omit)")
    return value


def _check_dim(arr: np.ndarray, dim: int, name: str) -> None:
    if arr.shape[-1] != dim:
        raise ShapeError(f"{name}: expected last dim {dim}, got shape {arr.shape}")


# ---------------------------------------------------------------------------
# batched forward steps
# ---------------------------------------------------------------------------

def _act(config: CellConfig, params: CellParams, a: np.ndarray) -> np.ndarray:
    return activate(config.activation, a, params.beta)


def rnn_forward(params: CellParams, x: np.ndarray, h_prev: np.ndarray) -> StepOut:
    cfg, t = params.config, params.tensors
    _check_dim(x, cfg.d_x, "x")
    _check_dim(h_prev, cfg.d_h, "h_prev")
    a = x @ t["W"].T + h_prev @ t["U"].T + t["b"]
    h = _act(cfg, params, a)
    return StepOut(h=h, cache={"a": a, "x": x, "h_prev": h_prev, "h": h})


def hornn_forward(
    params: CellParams,
    x: np.ndarray,
    h_prev: np.ndarray,
    h_lag_n: np.ndarray,
    h_lag_m: np.ndarray | None = None,
) -> StepOut:
    cfg, t = params.config, params.tensors
    _check_dim(x, cfg.d_x, "x")
    _check_dim(h_prev, cfg.d_h, "h_prev")
    _check_dim(h_lag_n, cfg.d_h, "h_lag_n")
    a = x @ t["W"].T + h_prev @ t["U1"].T + h_lag_n @ t["Un"].T + t["b"]
    if cfg.kind.uses_lag_m:
        a = a + _need(h_lag_m, "h_lag_m", cfg.kind)  # identity shortcut, no weight
    h = _act(cfg, params, a)
    return StepOut(h=h, cache={"a": a, "x": x, "h_prev": h_prev, "h_lag_n": h_lag_n, "h": h})


def hornnp_forward(
    params: CellParams,
    x: np.ndarray,
    p_prev: np.ndarray,
    p_lag_n: np.ndarray,
    h_lag_m: np.ndarray | None = None,
) -> StepOut:
    cfg, t = params.config, params.tensors
    _check_dim(x, cfg.d_x, "x")
    _check_dim(p_prev, cfg.d_p, "p_prev")
    _check_dim(p_lag_n, cfg.d_p, "p_lag_n")
    a = x @ t["W"].T + p_prev @ t["Up1"].T + p_lag_n @ t["Upn"].T + t["b"]
    if cfg.kind.uses_lag_m:
        a = a + _need(h_lag_m, "h_lag_m", cfg.kind)
    h = _act(cfg, params, a)
    p = h @ t["P"].T
    return StepOut(h=h, p=p, cache={"a": a, "x": x, "p_prev": p_prev, "p_lag_n": p_lag_n, "h": h})


def lstm_forward(params: CellParams, x: np.ndarray, rec_prev: np.ndarray, c_prev: np.ndarray) -> StepOut:
    """One gated step; ``rec_prev`` is h_{t-1} for lstm, p_{t-1} for lstmp."""
    cfg, t = params.config, params.tensors
    _check_dim(x, cfg.d_x, "x")
    rec_dim = cfg.d_p if cfg.kind is CellKind.LSTMP else cfg.d_h
    _check_dim(rec_prev, rec_dim, "recurrent input")
    _check_dim(c_prev, cfg.d_h, "c_prev")
    i = sigmoid(x @ t["Wi"].T + rec_prev @ t["Ui"].T + c_prev * t["vi"] + t["bi"])
    f = sigmoid(x @ t["Wf"].T + rec_prev @ t["Uf"].T + c_prev * t["vf"] + t["bf"])
    g = np.tanh(x @ t["Wc"].T + rec_prev @ t["Uc"].T + t["bc"])
    c = f * c_prev + i * g
    o = sigmoid(x @ t["Wo"].T + rec_prev @ t["Uo"].T + c * t["vo"] + t["bo"])
    tc = np.tanh(c)
    h = o * tc
    out = StepOut(h=h, c=c, cache={
        "x": x, "rec_prev": rec_prev, "c_prev": c_prev,
        "i": i, "f": f, "g": g, "o": o, "c": c, "tc": tc,
    })
    if cfg.kind is CellKind.LSTMP:
        out.p = h @ t["P"].T
        out.cache["h"] = h
    return out


def resrnn_forward(params: CellParams, x: np.ndarray, h_prev: np.ndarray, h_lag_m: np.ndarray) -> StepOut:
    cfg, t = params.config, params.tensors
    _check_dim(x, cfg.d_x, "x")
    _check_dim(h_prev, cfg.d_h, "h_prev")
    _check_dim(h_lag_m, cfg.d_h, "h_lag_m")
    a1 = x @ t["W"].T + h_prev @ t["Ud1"].T + t["b"]
    z = _act(cfg, params, a1)
    a2 = z @ t["Ud2"].T + h_lag_m
    h = _act(cfg, params, a2)
    return StepOut(h=h, cache={"a1": a1, "z": z, "a2": a2, "x": x, "h_prev": h_prev, "h": h})


def step_forward(params: CellParams, x: np.ndarray, **kw) -> StepOut:
    """Dispatch a batched forward step by cell kind (keyword-argument form)."""
    kind = params.config.kind
    if kind is CellKind.RNN:
        return rnn_forward(params, x, _need(kw.get("h_prev"), "h_prev", kind))
    if kind in (CellKind.HORNN_RELU, CellKind.HORNN_SIGMOID):
        return hornn_forward(
            params, x,
            _need(kw.get("h_prev"), "h_prev", kind),
            _need(kw.get("h_lag_n"), "h_lag_n", kind),
            kw.get("h_lag_m"),
        )
    if kind in (CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID):
        return hornnp_forward(
            params, x,
            _need(kw.get("p_prev"), "p_prev", kind),
            _need(kw.get("p_lag_n"), "p_lag_n", kind),
            kw.get("h_lag_m"),
        )
    if kind is CellKind.LSTM:
        return lstm_forward(params, x, _need(kw.get("h_prev"), "h_prev", kind),
                            _need(kw.get("c_prev"), "c_prev", kind))
    if kind is CellKind.LSTMP:
        return lstm_forward(params, x, _need(kw.get("p_prev"), "p_prev", kind),
                            _need(kw.get("c_prev"), "c_prev", kind))
    if kind is CellKind.RES_RNN:
        return resrnn_forward(params, x, _need(kw.get("h_prev"), "h_prev", kind),
                              _need(kw.get("h_lag_m"), "h_lag_m", kind))
    raise ConfigError(f"unhandled kind {kind}")  # pragma: no cover


# ---------------------------------------------------------------------------
# batched backward steps
# ---------------------------------------------------------------------------

def _beta_grad(params: CellParams, cache: dict, d_h: np.ndarray, a_key: str) -> np.ndarray:
    # d/dbeta of beta*sigmoid(a) is sigmoid(a)
    return np.sum(d_h * sigmoid(cache[a_key]), axis=0)


def _act_grad_cached(
    config: CellConfig, params: CellParams, cache: dict, a_key: str, out_key: str
) -> np.ndarray:
    """Activation derivative from the cached forward output where that is cheaper.

    sigma' = s*(1-s) and tanh' = 1 - t*t need no fresh exp; relu and
    psigmoid fall back to the pre-activation.
    """
    kind = config.activation
    if kind is ActivationKind.SIGMOID:
        s = cache[out_key]
        return s * (1.0 - s)
    if kind is ActivationKind.TANH:
        s = cache[out_key]
        return 1.0 - s * s
    return activate_grad(kind, cache[a_key], params.beta)


def rnn_backward(params: CellParams, cache: dict, d_h: np.ndarray, need_dx: bool = True) -> StepGrads:
    cfg, t = params.config, params.tensors
    da = d_h * _act_grad_cached(cfg, params, cache, "a", "h")
    grads = {
        "W": da.T @ cache["x"],
        "U": da.T @ cache["h_prev"],
        "b": da.sum(axis=0),
    }
    if cfg.activation is ActivationKind.PSIGMOID:
        grads["beta"] = _beta_grad(params, cache, d_h, "a")
    return StepGrads(
        params=grads,
        d_x=da @ t["W"] if need_dx else None,
        d_h_prev=da @ t["U"],
    )


def hornn_backward(params: CellParams, cache: dict, d_h: np.ndarray, need_dx: bool = True) -> StepGrads:
    cfg, t = params.config, params.tensors
    da = d_h * _act_grad_cached(cfg, params, cache, "a", "h")
    grads = {
        "W": da.T @ cache["x"],
        "U1": da.T @ cache["h_prev"],
        "b": da.sum(axis=0),
        "Un": da.T @ cache["h_lag_n"],
    }
    if cfg.activation is ActivationKind.PSIGMOID:
        grads["beta"] = _beta_grad(params, cache, d_h, "a")
    return StepGrads(
        params=grads,
        d_x=da @ t["W"] if need_dx else None,
        d_h_prev=da @ t["U1"],
        d_h_lag_n=da @ t["Un"],
        d_h_lag_m=da if cfg.kind.uses_lag_m else None,  # identity shortcut passes da through
    )


def hornnp_backward(
    params: CellParams, cache: dict, d_h: np.ndarray, d_p: np.ndarray | None, need_dx: bool = True
) -> StepGrads:
    cfg, t = params.config, params.tensors
    grads: dict = {}
    if d_p is not None:
        # fold the projection consumers back onto h_t:  p_t = P h_t
        grads["P"] = d_p.T @ cache["h"]
        d_h = d_h + d_p @ t["P"]
    else:
        grads["P"] = np.zeros_like(t["P"])
    da = d_h * _act_grad_cached(cfg, params, cache, "a", "h")
    grads.update({
        "W": da.T @ cache["x"],
        "Up1": da.T @ cache["p_prev"],
        "b": da.sum(axis=0),
        "Upn": da.T @ cache["p_lag_n"],
    })
    if cfg.activation is ActivationKind.PSIGMOID:
        grads["beta"] = _beta_grad(params, cache, d_h, "a")
    return StepGrads(
        params=grads,
        d_x=da @ t["W"] if need_dx else None,
        d_p_prev=da @ t["Up1"],
        d_p_lag_n=da @ t["Upn"],
        d_h_lag_m=da if cfg.kind.uses_lag_m else None,
    )


def lstm_backward(
    params: CellParams,
    cache: dict,
    d_h: np.ndarray,
    d_c: np.ndarray | None,
    d_p: np.ndarray | None = None,
    need_dx: bool = True,
) -> StepGrads:
    cfg, t = params.config, params.tensors
    i, f, g, o, c, tc = cache["i"], cache["f"], cache["g"], cache["o"], cache["c"], cache["tc"]
    c_prev, rec_prev, x = cache["c_prev"], cache["rec_prev"], cache["x"]
    grads: dict = {}
    if cfg.kind is CellKind.LSTMP:
        if d_p is not None:
            grads["P"] = d_p.T @ cache["h"]
            d_h = d_h + d_p @ t["P"]
        else:
            grads["P"] = np.zeros_like(t["P"])

    do = d_h * tc
    dao = do * o * (1.0 - o)
    dc = d_h * o * (1.0 - tc * tc) + dao * t["vo"]
    if d_c is not None:
        dc = dc + d_c
    di = dc * g
    dai = di * i * (1.0 - i)
    df = dc * c_prev
    daf = df * f * (1.0 - f)
    dg = dc * i
    dac = dg * (1.0 - g * g)

    for name, da in (("i", dai), ("f", daf), ("c", dac), ("o", dao)):
        grads[f"W{name}"] = da.T @ x
        grads[f"U{name}"] = da.T @ rec_prev
        grads[f"b{name}"] = da.sum(axis=0)
    grads["vi"] = np.sum(dai * c_prev, axis=0)
    grads["vf"] = np.sum(daf * c_prev, axis=0)
    grads["vo"] = np.sum(dao * c, axis=0)

    d_rec_prev = dai @ t["Ui"] + daf @ t["Uf"] + dac @ t["Uc"] + dao @ t["Uo"]
    d_c_prev = dc * f + dai * t["vi"] + daf * t["vf"]
    d_x = None
    if need_dx:
        d_x = dai @ t["Wi"] + daf @ t["Wf"] + dac @ t["Wc"] + dao @ t["Wo"]
    out = StepGrads(params=grads, d_x=d_x, d_c_prev=d_c_prev)
    if cfg.kind is CellKind.LSTMP:
        out.d_p_prev = d_rec_prev
    else:
        out.d_h_prev = d_rec_prev
    return out


def resrnn_backward(params: CellParams, cache: dict, d_h: np.ndarray, need_dx: bool = True) -> StepGrads:
    cfg, t = params.config, params.tensors
    da2 = d_h * _act_grad_cached(cfg, params, cache, "a2", "h")
    dz = da2 @ t["Ud2"]
    da1 = dz * _act_grad_cached(cfg, params, cache, "a1", "z")
    grads = {
        "W": da1.T @ cache["x"],
        "Ud1": da1.T @ cache["h_prev"],
        "b": da1.sum(axis=0),
        "Ud2": da2.T @ cache["z"],
    }
    if cfg.activation is ActivationKind.PSIGMOID:
        grads["beta"] = np.sum(d_h * sigmoid(cache["a2"]), axis=0) + np.sum(dz * sigmoid(cache["a1"]), axis=0)
    return StepGrads(
        params=grads,
        d_x=da1 @ t["W"] if need_dx else None,
        d_h_prev=da1 @ t["Ud1"],
        d_h_lag_m=da2,  # identity residual connection
    )


def step_backward(
    params: CellParams,
    cache: dict,
    d_h: np.ndarray,
    d_c: np.ndarray | None = None,
    d_p: np.ndarray | None = None,
    need_dx: bool = True,
) -> StepGrads:
    kind = params.config.kind
    if kind is CellKind.RNN:
        return rnn_backward(params, cache, d_h, need_dx)
    if kind in (CellKind.HORNN_RELU, CellKind.HORNN_SIGMOID):
        return hornn_backward(params, cache, d_h, need_dx)
    if kind in (CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID):
        return hornnp_backward(params, cache, d_h, d_p, need_dx)
    if kind.is_lstm:
        return lstm_backward(params, cache, d_h, d_c, d_p, need_dx)
    if kind is CellKind.RES_RNN:
        return resrnn_backward(params, cache, d_h, need_dx)
    raise ConfigError(f"unhandled kind {kind}")  # pragma: no cover


# ---------------------------------------------------------------------------
# single-vector step API
# ---------------------------------------------------------------------------

def _row(v: np.ndarray | None) -> np.ndarray | None:
    return None if v is None else np.asarray(v, dtype=np.float64)[None, :]


def _dispatch_vector(params: CellParams, ctx: StepContext) -> StepOut:
    return step_forward(
        params,
        _row(np.asarray(ctx.x, dtype=np.float64)),
        h_prev=_row(ctx.h_prev),
        h_lag_n=_row(ctx.h_lag_n),
        h_lag_m=_row(ctx.h_lag_m),
        p_prev=_row(ctx.p_prev),
        p_lag_n=_row(ctx.p_lag_n),
        c_prev=_row(ctx.c_prev),
    )


def rnn_step(params: CellParams, ctx: StepContext) -> np.ndarray:
    """h_t = f(W x_t + U h_{t-1} + b)."""
    return _dispatch_vector(params, ctx).h[0]


def hornn_step(params: CellParams, ctx: StepContext) -> np.ndarray:
    """High-order step; the sigmoid-structured kinds add h_{t-m} unweighted."""
    return _dispatch_vector(params, ctx).h[0]


def hornnp_step(params: CellParams, ctx: StepContext) -> tuple[np.ndarray, np.ndarray]:
    """Projected high-order step; returns (h_t, p_t) with p_t = P h_t."""
    out = _dispatch_vector(params, ctx)
    return out.h[0], out.p[0]


def lstm_step(params: CellParams, ctx: StepContext) -> tuple[np.ndarray, np.ndarray]:
    """Gated memory step with diagonal peepholes; returns (h_t, c_t)."""
    out = _dispatch_vector(params, ctx)
    return out.h[0], out.c[0]


def lstmp_step(params: CellParams, ctx: StepContext) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projected gated step; returns (h_t, c_t, p_t)."""
    out = _dispatch_vector(params, ctx)
    return out.h[0], out.c[0], out.p[0]


def resrnn_step(params: CellParams, ctx: StepContext) -> np.ndarray:
    """h_t = f(Ud2 f(W x_t + Ud1 h_{t-1} + b) + h_{t-m}), recurrent kernel depth two."""
    return _dispatch_vector(params, ctx).h[0]
