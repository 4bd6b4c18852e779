"""Closed-form parameter and multiply-add accounting for every cell kind.

The formulas count the recurrent layer alone (no classification head) and
are written out per kind rather than derived from tensor shapes, so they
can be cross-checked against the literal element counts of constructed
parameters.  The trainable activation scale of the p-sigmoid adds d_h
scalars that are reported separately and never included in the recurrent
figures.  Multiply-add counts ignore element-wise work (biases, gates,
peepholes, activations); only matrix-vector products count.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .cells import CellConfig, CellKind
from .errors import ConfigError


def param_count(config: CellConfig) -> int:
    """Exact scalar parameter count of one recurrent layer."""
    k, dx, dh, dp = config.kind, config.d_x, config.d_h, config.d_p
    if k is CellKind.RNN:
        return (dx + dh) * dh + dh
    if k in (CellKind.HORNN_RELU, CellKind.HORNN_SIGMOID):
        # the unweighted lag-m shortcut of the sigmoid kind adds nothing
        return (dx + 2 * dh) * dh + dh
    if k in (CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID):
        return dh * dp + (dx + 2 * dp) * dh + dh
    if k is CellKind.LSTM:
        return 4 * (dx + dh) * dh + 7 * dh
    if k is CellKind.LSTMP:
        return dh * dp + 4 * (dx + dp) * dh + 7 * dh
    if k is CellKind.RES_RNN:
        # W, U_d1, U_d2, b; the residual lag-m input is unweighted
        return (dx + dh) * dh + dh * dh + dh
    raise ConfigError(f"unhandled kind {k}")  # pragma: no cover


def activation_param_count(config: CellConfig) -> int:
    """Extra trainable scalars added by the activation itself (p-sigmoid scale)."""
    from .math_core import ActivationKind

    return config.d_h if config.activation is ActivationKind.PSIGMOID else 0


def madds_per_frame(config: CellConfig) -> int:
    """Multiply-adds one layer spends per frame, element-wise work excluded."""
    k, dx, dh, dp = config.kind, config.d_x, config.d_h, config.d_p
    if k is CellKind.RNN:
        return (dx + dh) * dh
    if k in (CellKind.HORNN_RELU, CellKind.HORNN_SIGMOID):
        return (dx + 2 * dh) * dh
    if k in (CellKind.HORNNP_RELU, CellKind.HORNNP_SIGMOID):
        return (dx + 3 * dp) * dh
    if k is CellKind.LSTM:
        return 4 * (dx + dh) * dh
    if k is CellKind.LSTMP:
        return dh * dp + 4 * (dx + dp) * dh
    if k is CellKind.RES_RNN:
        return (dx + 2 * dh) * dh
    raise ConfigError(f"unhandled kind {k}")  # pragma: no cover


def _check_chain(configs: list[CellConfig]) -> None:
    if not configs:
        raise ConfigError("empty layer stack")
    for i in range(1, len(configs)):
        need = configs[i - 1].out_dim
        got = configs[i].d_x
        if got != need:
            raise ConfigError(f"layer {i} expects d_x={got} but layer {i - 1} emits {need}")


def stack_param_count(configs: list[CellConfig]) -> int:
    """Sum of per-layer counts; the dimension chain must already line up."""
    _check_chain(configs)
    return sum(param_count(c) for c in configs)


_UNPROJECTED = {
    CellKind.LSTMP: CellKind.LSTM,
    CellKind.HORNNP_RELU: CellKind.HORNN_RELU,
    CellKind.HORNNP_SIGMOID: CellKind.HORNN_SIGMOID,
}


def unprojected_counterpart(config: CellConfig) -> CellConfig:
    """The same layer with the projection removed; non-projected kinds are their own."""
    if config.kind not in _UNPROJECTED:
        return config
    return CellConfig(
        kind=_UNPROJECTED[config.kind],
        d_x=config.d_x,
        d_h=config.d_h,
        n=config.n if config.kind.uses_lag_n else None,
        m=config.m if config.kind.uses_lag_m else None,
        activation=config.activation,
    )


@dataclass
class ReductionRatio:
    """Exact projected-versus-unprojected parameter ratio and its 2d_h/3d_p approximation."""

    exact: Fraction
    approx: Fraction
    rel_diff: float


def reduction_ratio(d_h: int, d_p: int, d_x: int = 80) -> ReductionRatio:
    """Parameter ratio of a high-order layer to its projected variant.

    The approximation 2*d_h/(3*d_p) drops the input and bias terms; the
    exact ratio needs d_x, which defaults to the dimension both figures in
    the tables use.
    """
    if d_p <= 0:
        raise ConfigError(f"d_p must be positive, got {d_p}")
    full = param_count(CellConfig(CellKind.HORNN_SIGMOID, d_x=d_x, d_h=d_h))
    projected = param_count(CellConfig(CellKind.HORNNP_SIGMOID, d_x=d_x, d_h=d_h, d_p=d_p))
    exact = Fraction(full, projected)
    approx = Fraction(2 * d_h, 3 * d_p)
    rel_diff = float(abs(exact - approx) / exact)
    return ReductionRatio(exact=exact, approx=approx, rel_diff=rel_diff)


@dataclass
class CostReport:
    params_recurrent: int
    madds_per_frame: int
    reduction_ratio_vs_unprojected: Fraction
    per_layer: list[dict]

    def to_dict(self) -> dict:
        ratio = self.reduction_ratio_vs_unprojected
        return {
            "params_recurrent": self.params_recurrent,
            "madds_per_frame": self.madds_per_frame,
            "reduction_ratio_vs_unprojected": f"{ratio.numerator}/{ratio.denominator}",
            "reduction_ratio_float": float(ratio),
            "per_layer": self.per_layer,
        }


def cost_report(configs: list[CellConfig]) -> CostReport:
    """Stack-level cost accounting with a per-layer breakdown.

    The reduction ratio compares the stack against one with every projected
    layer replaced by its unprojected counterpart (layer-local comparison;
    inter-layer dims are kept as configured).
    """
    _check_chain(configs)
    per_layer = []
    total_params = 0
    total_madds = 0
    unprojected_params = 0
    for c in configs:
        p = param_count(c)
        m = madds_per_frame(c)
        total_params += p
        total_madds += m
        unprojected_params += param_count(unprojected_counterpart(c))
        per_layer.append({
            "kind": c.kind.value,
            "d_x": c.d_x,
            "d_h": c.d_h,
            "d_p": c.d_p,
            "n": c.n,
            "m": c.m,
            "params": p,
            "madds": m,
            "activation_params": activation_param_count(c),
        })
    return CostReport(
        params_recurrent=total_params,
        madds_per_frame=total_madds,
        reduction_ratio_vs_unprojected=Fraction(unprojected_params, total_params),
        per_layer=per_layer,
    )
