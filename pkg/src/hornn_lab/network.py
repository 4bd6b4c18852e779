"""Network structure: recurrent layers, a post-recurrent hidden layer, and a softmax output.

Layer i feeds layer i+1 with its exposed output (the projection p_t for
projected kinds, h_t otherwise), so the chained dimensions must line up.
Between the top recurrent layer and the output sits one feedforward hidden
layer whose width equals the top layer's hidden dimension; it uses ReLU when
the top cell is ReLU-activated and plain sigmoid otherwise.

Initialization gives every layer its own jumped substream of one seed and
draws tensors in the canonical order from ``cells.tensor_shapes``; two
networks built from the same seed therefore share every tensor their
architectures have in common, which makes cross-architecture gradient
comparisons differ only in the structure under test.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .cells import CellConfig, CellParams, init_cell_params
from .errors import ConfigError, ShapeError
from .math_core import ActivationKind


def head_activation(top: CellConfig) -> ActivationKind:
    """ReLU heads over ReLU cells, sigmoid heads otherwise (p-sigmoid and tanh included)."""
    if top.activation is ActivationKind.RELU:
        return ActivationKind.RELU
    return ActivationKind.SIGMOID


@dataclass
class NetworkConfig:
    layers: list[CellConfig]
    n_classes: int

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a network needs at least one recurrent layer")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        for i in range(1, len(self.layers)):
            need = self.layers[i - 1].out_dim
            got = self.layers[i].d_x
            if got != need:
                raise ConfigError(
                    f"layer {i} expects d_x={got} but layer {i - 1} emits {need}"
                )

    @property
    def d_in(self) -> int:
        return self.layers[0].d_x

    @property
    def top_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_dim(self) -> int:
        """Width of the feedforward layer between recurrence and output."""
        return self.layers[-1].d_h

    @property
    def max_lag(self) -> int:
        return max(layer.max_lag for layer in self.layers)

    def to_dict(self) -> dict:
        return {"layers": [c.to_dict() for c in self.layers], "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            layers=[CellConfig.from_dict(c) for c in d["layers"]],
            n_classes=int(d["n_classes"]),
        )


@dataclass
class NetworkParams:
    config: NetworkConfig
    cells: list[CellParams]
    hid_w: np.ndarray   # (hidden_dim, top_dim)
    hid_b: np.ndarray   # (hidden_dim,)
    out_w: np.ndarray   # (n_classes, hidden_dim)
    out_b: np.ndarray   # (n_classes,)

    def __post_init__(self):
        if len(self.cells) != len(self.config.layers):
            raise ConfigError(
                f"{len(self.cells)} cell parameter sets for {len(self.config.layers)} layers"
            )
        checks = (
            ("hidden weight", self.hid_w, (self.config.hidden_dim, self.config.top_dim)),
            ("hidden bias", self.hid_b, (self.config.hidden_dim,)),
            ("output weight", self.out_w, (self.config.n_classes, self.config.hidden_dim)),
            ("output bias", self.out_b, (self.config.n_classes,)),
        )
        for what, arr, want in checks:
            if arr.shape != want:
                raise ShapeError(f"{what}: expected shape {want}, got {arr.shape}")

    def element_count(self, include_activation: bool = False, include_head: bool = True) -> int:
        total = sum(c.element_count(include_activation) for c in self.cells)
        if include_head:
            total += self.hid_w.size + self.hid_b.size + self.out_w.size + self.out_b.size
        return total

    def flat_tensors(self) -> "OrderedDict[str, np.ndarray]":
        """Path-keyed views of every tensor: ``layers.<i>.<name>`` plus the head tensors."""
        flat: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for i, cell in enumerate(self.cells):
            for name, arr in cell.tensors.items():
                flat[f"layers.{i}.{name}"] = arr
        flat["head.Wh"] = self.hid_w
        flat["head.bh"] = self.hid_b
        flat["head.Wo"] = self.out_w
        flat["head.bo"] = self.out_b
        return flat

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.config,
            [c.copy() for c in self.cells],
            self.hid_w.copy(),
            self.hid_b.copy(),
            self.out_w.copy(),
            self.out_b.copy(),
        )


def init_network(config: NetworkConfig, seed: int, scale: float = 0.05) -> NetworkParams:
    """Draw parameters for every layer and the head from per-layer seeded streams.

    Layer i uses the jumped substream i+1 of the seed and the head uses the
    base stream, so architectures that share layer structure share values.
    """
    base = np.random.PCG64(seed)
    cells = []
    for i, layer_cfg in enumerate(config.layers):
        rng = np.random.Generator(base.jumped(i + 1))
        cells.append(init_cell_params(layer_cfg, rng, scale))
    head_rng = np.random.Generator(np.random.PCG64(seed))
    hid_w = head_rng.uniform(-scale, scale, size=(config.hidden_dim, config.top_dim))
    hid_b = head_rng.uniform(-scale, scale, size=(config.hidden_dim,))
    out_w = head_rng.uniform(-scale, scale, size=(config.n_classes, config.hidden_dim))
    out_b = head_rng.uniform(-scale, scale, size=(config.n_classes,))
    return NetworkParams(config, cells, hid_w, hid_b, out_w, out_b)
