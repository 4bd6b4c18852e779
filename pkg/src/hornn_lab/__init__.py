"""Laboratory for high-order recurrent networks.

Exact-gradient recurrent cells (plain, high-order, projected, LSTM with
peepholes, residual), a truncated-unfolding trainer with update clipping and
a halving learning-rate schedule, closed-form parameter and multiply-add
counts, finite-difference gradient checks, lag-resolved gradient-norm
curves, and synthetic long-range tasks.  Serving layer in
``hornn_lab.service``, command-line client in ``hornn_lab.cli``.
"""

from .cells import CellConfig, CellKind, CellParams, init_cell_params, parse_kind
from .cost_model import cost_report, madds_per_frame, param_count, reduction_ratio
from .engine import Schedule, TrainConfig, evaluate, run_training, unfold_forward
from .errors import ConfigError, HornnLabError, NumericError, ShapeError
from .grad_lab import decay_compare, finite_diff_check, lag_curve
from .math_core import ActivationKind
from .network import NetworkConfig, NetworkParams, init_network

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "CellConfig",
    "CellKind",
    "CellParams",
    "ConfigError",
    "HornnLabError",
    "NetworkConfig",
    "NetworkParams",
    "NumericError",
    "Schedule",
    "ShapeError",
    "TrainConfig",
    "cost_report",
    "decay_compare",
    "evaluate",
    "finite_diff_check",
    "init_cell_params",
    "init_network",
    "lag_curve",
    "madds_per_frame",
    "param_count",
    "parse_kind",
    "reduction_ratio",
    "run_training",
    "unfold_forward",
]
