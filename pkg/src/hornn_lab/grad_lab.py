"""Gradient-flow diagnostics.

Three instruments: ``finite_diff_check`` validates every analytic gradient
against central differences on a small single-layer network;  ``lag_curve``
measures how the gradient norm of a step's loss decays with the lag back to
earlier hidden states; ``decay_compare`` fits log-linear decay rates across
architectures under matched initialization.

All diagnostics are read-only with respect to parameters.  ``lag_curve``
exploits batch independence: B copies of the probe run side by side, copy j
scoring only step t_j, so one backward pass yields the per-t gradient norms
for every lag at once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cells import CellConfig
from .engine import bptt_backward, softmax_xent, unfold_forward
from .errors import ConfigError
from .network import NetworkConfig, NetworkParams, init_network


def _single_layer_network(config: CellConfig, n_classes: int, seed: int, scale: float) -> NetworkParams:
    return init_network(NetworkConfig(layers=[config], n_classes=n_classes), seed, scale)


def _widened_copy(params: NetworkParams, dtype) -> NetworkParams:
    from collections import OrderedDict

    from .cells import CellParams

    cells = [
        CellParams(c.config, OrderedDict((k, v.astype(dtype)) for k, v in c.tensors.items()))
        for c in params.cells
    ]
    return NetworkParams(
        config=params.config,
        cells=cells,
        hid_w=params.hid_w.astype(dtype),
        hid_b=params.hid_b.astype(dtype),
        out_w=params.out_w.astype(dtype),
        out_b=params.out_b.astype(dtype),
    )


def _window_loss(params: NetworkParams, x: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    fwd = unfold_forward(params, x)
    loss, _, _, _ = softmax_xent(fwd.logits, targets, mask)
    return loss


def finite_diff_check(
    config: CellConfig,
    seed: int,
    T: int,
    n_classes: int = 3,
    epsilon: float = 1e-5,
    init_scale: float = 0.2,
    corrupt: bool = False,
) -> float:
    """Max relative error between analytic gradients and central differences.

    A one-layer network (cell plus head) is scored at every step, and every
    scalar parameter is perturbed by +/-epsilon.  Relative error per scalar
    is |analytic - numeric| / max(|numeric|, 1e-8).

    Central differences at this epsilon carry an irreducible truncation
    error near 5e-11, so any parameter whose true gradient falls below
    ~3e-5 blows past the tolerance without the analytic side being wrong.
    The probe is therefore conditioned so every gradient entry stays large:
    inputs uniform in [0.5, 1.5]; cell weights uniform in
    [0.1, 0.1 + init_scale] (the floor keeps gate and cell states away from
    zero); head weights positive with output rows graded upward by class
    while the target is always class zero, so the loss gradient at the
    logits stays order one and every backward signal keeps one sign across
    steps, accumulating instead of cancelling.  Positivity also keeps ReLU
    pre-activations off the kink, where central differences are
    meaningless.  Conditioning does not blunt the oracle: any wrong or
    missing term still shifts some entry by a relative error near one, and
    ``corrupt`` damages one analytic entry to prove the harness can fail.
    """
    if config.d_h > 16 or T > 32:
        raise ConfigError(
            f"finite differences need desk-scale instances (d_h <= 16, T <= 32), "
            f"got d_h={config.d_h}, T={T}"
        )
    params = _single_layer_network(config, n_classes, seed, init_scale)
    rng = np.random.Generator(np.random.PCG64(seed).jumped(7919))
    for cell in params.cells:
        for name, tensor in cell.tensors.items():
            if name == "beta":
                continue
            tensor[...] = rng.uniform(0.1, 0.1 + init_scale, size=tensor.shape)
    params.hid_w[...] = rng.uniform(0.1, 0.15, size=params.hid_w.shape)
    params.hid_b[...] = rng.uniform(0.02, 0.05, size=params.hid_b.shape)
    grades = 0.1 + 0.55 * np.arange(n_classes) / max(n_classes - 1, 1)
    params.out_w[...] = grades[:, None] + rng.uniform(0.0, 0.03, size=params.out_w.shape)
    params.out_b[...] = rng.uniform(0.02, 0.05, size=params.out_b.shape)
    x = rng.uniform(0.5, 1.5, size=(T, 1, config.d_x))
    targets = np.zeros((T, 1), dtype=np.int64)
    mask = np.ones((T, 1))

    fwd = unfold_forward(params, x)
    _, d_logits, _, _ = softmax_xent(fwd.logits, targets, mask)
    back = bptt_backward(params, fwd, d_logits, normalize_sharing=False)
    analytic = back.grads.flat_tensors()
    if corrupt:
        first = next(iter(analytic))
        analytic[first].flat[0] += 0.1

    # The numeric side runs in the longest float the platform has (80-bit on
    # x86).  At 64 bits the rounding floor of the central difference is
    # u*loss/eps ~ 3e-11, which swamps the tolerance for any parameter whose
    # true gradient is below ~3e-5; the analytic path under test stays 64-bit.
    wide = np.longdouble
    probe = _widened_copy(params, wide)
    x_wide = x.astype(wide)
    eps = wide(epsilon)

    max_rel = 0.0
    flat_probe = probe.flat_tensors()
    for path, tensor in flat_probe.items():
        a_grad = analytic[path]
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + eps
            loss_hi = _window_loss(probe, x_wide, targets, mask)
            tensor[idx] = orig - eps
            loss_lo = _window_loss(probe, x_wide, targets, mask)
            tensor[idx] = orig
            numeric = float((loss_hi - loss_lo) / (2.0 * eps))
            rel = abs(float(a_grad[idx]) - numeric) / max(abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
    return max_rel


@dataclass
class LagCurve:
    lags: np.ndarray        # 0..K
    norms: np.ndarray       # g(k), mean over probe positions of the gradient 2-norm
    decay_rate: float       # lambda of the log-linear fit over k in [2, K]
    seeds: list[int] = field(default_factory=list)


def fit_decay_rate(lags: np.ndarray, norms: np.ndarray, k_lo: int = 2) -> float:
    """Least-squares slope of log g(k) ~ alpha - lambda*k over k >= k_lo.

    A zero norm ends the fit window (log undefined); fewer than two usable
    points make the fit degenerate, reported as NaN.
    """
    ks = []
    logs = []
    for k, g in zip(lags, norms):
        if k < k_lo:
            continue
        if g <= 0.0:
            break
        ks.append(float(k))
        logs.append(np.log(g))
    if len(ks) < 2:
        return float("nan")
    slope = np.polyfit(np.array(ks), np.array(logs), 1)[0]
    return float(-slope)


def lag_curve(
    params: NetworkParams,
    probe: np.ndarray,
    K: int,
    targets: np.ndarray | None = None,
    seed: int = 0,
) -> LagCurve:
    """Mean gradient norm of a step's loss with respect to the state k steps back.

    g(k) = mean over t of ||dL_t/ds_{t-k}||_2 for k = 0..K, where s is the
    recurrent state history carries: h for plain kinds, the projection p for
    projected kinds.  Every t in [K+1, T] is measured in one batched pass.
    Parameters are left untouched.
    """
    if probe.ndim != 2:
        raise ConfigError(f"probe must be (T, d_x), got shape {probe.shape}")
    T = probe.shape[0]
    if K >= T:
        raise ConfigError(f"need K < T, got K={K}, T={T}")
    if K < 0:
        raise ConfigError(f"K must be >= 0, got {K}")
    n_classes = params.config.n_classes
    if targets is None:
        t_rng = np.random.Generator(np.random.PCG64(seed).jumped(104729))
        targets_1d = t_rng.integers(0, n_classes, size=T)
    else:
        targets_1d = np.asarray(targets)
        if targets_1d.shape != (T,):
            raise ConfigError(f"targets must be shape ({T},), got {targets_1d.shape}")

    B = T - K  # probe positions t = K+1 .. T (1-based steps)
    x = np.repeat(probe[:, None, :], B, axis=1)
    tgt = np.repeat(targets_1d[:, None], B, axis=1)
    mask = np.zeros((T, B))
    for j in range(B):
        mask[K + j, j] = 1.0

    fwd = unfold_forward(params, x)
    _, d_logits, _, _ = softmax_xent(fwd.logits, tgt, mask)
    back = bptt_backward(params, fwd, d_logits, normalize_sharing=False, return_state_grads=True)
    top = back.state_grads[-1]
    cfg = params.config.layers[-1]
    buf = top["P"] if cfg.kind.projected else top["H"]  # (T+1, B, dim)

    norms = np.empty(K + 1)
    for k in range(K + 1):
        acc = 0.0
        for j in range(B):
            t_step = K + 1 + j
            acc += float(np.linalg.norm(buf[t_step - k, j]))
        norms[k] = acc / B
    lags = np.arange(K + 1)
    return LagCurve(lags=lags, norms=norms, decay_rate=fit_decay_rate(lags, norms, k_lo=2), seeds=[seed])


@dataclass
class DecayEntry:
    label: str
    kind: str
    activation: str
    seed: int
    decay_rate: float
    norms: np.ndarray


@dataclass
class DecayCompareResult:
    entries: list[DecayEntry]
    medians: dict        # label -> median decay rate (NaN entries excluded)
    baseline_label: str
    flags: dict          # label -> median(label) <= median(baseline)

    def to_summary(self) -> dict:
        return {
            "medians": {k: (None if np.isnan(v) else v) for k, v in self.medians.items()},
            "baseline": self.baseline_label,
            "decays_no_faster_than_baseline": self.flags,
        }


def config_label(index: int, config: CellConfig) -> str:
    return f"{index}:{config.kind.value}:{config.activation.value}"


def decay_compare(
    configs: list[CellConfig],
    seeds: list[int],
    K: int,
    probe_len: int | None = None,
    n_classes: int = 4,
    init_scale: float = 0.05,
    max_workers: int = 1,
) -> DecayCompareResult:
    """Fit per-seed decay rates for each architecture under matched initialization.

    For a given seed, every architecture sees the same probe, the same
    targets, and parameters drawn from the same streams, so tensors their
    layouts share are numerically identical; the first config is the
    baseline the others are flagged against.  Degenerate (all-zero) curves
    yield NaN rates and are excluded from medians rather than raised.
    """
    if len(seeds) < 3:
        raise ConfigError(f"decay comparison needs at least 3 seeds, got {len(seeds)}")
    if not configs:
        raise ConfigError("no architectures to compare")
    for c in configs[1:]:
        if c.d_x != configs[0].d_x:
            raise ConfigError("compared architectures must share the input dimension")
    T = probe_len if probe_len is not None else K + 21
    if K >= T:
        raise ConfigError(f"need K < probe length, got K={K}, T={T}")

    def one(args: tuple[int, CellConfig, int]) -> DecayEntry:
        ci, config, seed = args
        params = _single_layer_network(config, n_classes, seed, init_scale)
        p_rng = np.random.Generator(np.random.PCG64(seed).jumped(15485863))
        probe = p_rng.standard_normal((T, config.d_x))
        targets = p_rng.integers(0, n_classes, size=T)
        curve = lag_curve(params, probe, K, targets=targets)
        return DecayEntry(
            label=config_label(ci, config),
            kind=config.kind.value,
            activation=config.activation.value,
            seed=seed,
            decay_rate=curve.decay_rate,
            norms=curve.norms,
        )

    jobs = [(ci, config, seed) for ci, config in enumerate(configs) for seed in seeds]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            entries = list(pool.map(one, jobs))
    else:
        entries = [one(j) for j in jobs]

    medians: dict = {}
    for ci, config in enumerate(configs):
        label = config_label(ci, config)
        rates = [e.decay_rate for e in entries if e.label == label and not np.isnan(e.decay_rate)]
        medians[label] = float(np.median(rates)) if rates else float("nan")
    baseline = config_label(0, configs[0])
    flags = {}
    for label, med in medians.items():
        if label == baseline:
            continue
        base = medians[baseline]
        flags[label] = bool(med <= base) if not (np.isnan(med) or np.isnan(base)) else False
    return DecayCompareResult(entries=entries, medians=medians, baseline_label=baseline, flags=flags)
