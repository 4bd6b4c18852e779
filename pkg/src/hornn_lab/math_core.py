"""Dense float64 matrix/vector primitives, activations, and seeded RNG.

Conventions used throughout the package:

* a "matrix" is a 2-D C-contiguous ``np.float64`` array (rows x cols),
* a "vector" is a 1-D ``np.float64`` array,
* all reference-path computation is 64-bit,
* randomness always flows from an explicit seed through PCG64, so the
  same seed reproduces the same values on every platform and run.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError


class ActivationKind(str, Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"
    TANH = "tanh"
    # sigmoid with a per-unit linear output scale (trainable amplitude)
    PSIGMOID = "psigmoid"


def sigmoid(a: np.ndarray) -> np.ndarray:
    """Numerically stable elementwise logistic function.

    exp is only ever taken of -|a|, so it cannot overflow; the two sign
    branches share the denominator 1 + exp(-|a|).
    """
    a = np.asarray(a, dtype=np.float64)
    t = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0, t) / (1.0 + t)


def activate(kind: ActivationKind, a: np.ndarray, beta: np.ndarray | None = None) -> np.ndarray:
    """Apply the activation elementwise.

    For PSIGMOID the per-unit scale ``beta`` is required and the result is
    ``beta * sigmoid(a)`` (beta broadcasts over leading batch axes).
    """
    a = np.asarray(a, dtype=np.float64)
    if kind is ActivationKind.SIGMOID:
        return sigmoid(a)
    if kind is ActivationKind.RELU:
        return np.maximum(a, 0.0)
    if kind is ActivationKind.TANH:
        return np.tanh(a)
    if kind is ActivationKind.PSIGMOID:
        _check_beta(a, beta)
        return beta * sigmoid(a)
    raise ConfigError(f"unknown activation kind: {kind!r}")


def activate_grad(kind: ActivationKind, a: np.ndarray, beta: np.ndarray | None = None) -> np.ndarray:
    """Elementwise derivative of the activation at pre-activation ``a``.

    The ReLU subgradient at exactly 0 is taken to be 0.  The sigmoid
    derivative is sigma*(1-sigma), bounded above by 1/4.
    """
    a = np.asarray(a, dtype=np.float64)
    if kind is ActivationKind.SIGMOID:
        s = sigmoid(a)
        return s * (1.0 - s)
    if kind is ActivationKind.RELU:
        return (a > 0).astype(np.float64)
    if kind is ActivationKind.TANH:
        t = np.tanh(a)
        return 1.0 - t * t
    if kind is ActivationKind.PSIGMOID:
        _check_beta(a, beta)
        s = sigmoid(a)
        return beta * s * (1.0 - s)
    raise ConfigError(f"unknown activation kind: {kind!r}")


def _check_beta(a: np.ndarray, beta: np.ndarray | None) -> None:
    if beta is None:
        raise ShapeError("psigmoid requires a scale vector beta")
    if beta.shape[-1] != a.shape[-1]:
        raise ShapeError(
            f"psigmoid scale dim {beta.shape[-1]} does not match activation dim {a.shape[-1]}"
        )


def gemv(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with explicit shape checking."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"gemv expects a 2-D matrix, got shape {m.shape}")
    if v.ndim != 1:
        raise ShapeError(f"gemv expects a 1-D vector, got shape {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"gemv: matrix {m.shape[0]}x{m.shape[1]} incompatible with vector of dim {v.shape[0]}")
    return m @ v


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; the single PRNG used everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def seeded_uniform(rows: int, cols: int, lo: float, hi: float, seed: int) -> np.ndarray:
    """Reproducible uniform matrix in [lo, hi); identical for identical seeds."""
    if not lo < hi:
        raise ConfigError(f"seeded_uniform requires lo < hi, got lo={lo}, hi={hi}")
    if rows <= 0 or cols <= 0:
        raise ConfigError(f"seeded_uniform requires positive dims, got {rows}x{cols}")
    return seeded_rng(seed).uniform(lo, hi, size=(rows, cols))


def require_finite(x: np.ndarray, what: str) -> None:
    from .errors import NumericError

    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
