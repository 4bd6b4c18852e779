"""Unfolded forward/backward passes and the truncated-BPTT training loop.

Training treats every frame of every sequence as one sample: the window of
``unfold_steps`` inputs ending at that frame (zero-padded past the sequence
start), scored at the final step only.  Windows are shuffled at the frame
level each epoch, the loss is sum-reduced cross-entropy, the accumulated
gradients of time-shared cell tensors are divided by the window length (the
sharing count), and raw updates are clamped element-wise to a threshold that
scales with the number of frames in the minibatch.

State buffers use a leading zero slot: ``H[0]`` is the all-zero initial
state and lag reads clamp their index to 0, so every reference before the
window start resolves to the zero vector.  The backward pass scatters
out-of-range lag gradients into that same slot, which is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import is_weight_matrix, step_backward, step_forward
from .errors import ConfigError, NumericError
from .math_core import activate, activate_grad
from .network import NetworkParams, head_activation


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass
class UnfoldedStates:
    """Everything the backward pass needs from one unfolded forward pass."""

    x: np.ndarray                 # (T, B, d_in)
    states: list[dict]            # per layer: {"H": (T+1,B,dh), "P": ..., "C": ...}
    caches: list[list[dict]]      # [layer][step] backward caches
    outputs: np.ndarray           # (T, B, top_dim) exposed output of the top layer
    hidden_a: np.ndarray          # (T, B, hidden_dim) head hidden pre-activations
    hidden: np.ndarray            # (T, B, hidden_dim) head hidden activations
    logits: np.ndarray            # (T, B, n_classes)


def unfold_forward(params: NetworkParams, x: np.ndarray) -> UnfoldedStates:
    """Run the network over a (T, B, d_in) window and score every step."""
    if x.ndim != 3:
        raise ConfigError(f"expected a (T, B, d_in) input window, got shape {x.shape}")
    T, B, d_in = x.shape
    if d_in != params.config.d_in:
        raise ConfigError(f"input dim {d_in} does not match network d_in {params.config.d_in}")
    if T < params.config.max_lag:
        raise ConfigError(
            f"unfold window T={T} is shorter than the longest lag {params.config.max_lag}"
        )

    # state buffers follow the input dtype so extended-precision probes
    # (finite-difference oracle) stay extended end to end
    dtype = np.result_type(x.dtype, np.float64)
    states: list[dict] = []
    caches: list[list[dict]] = []
    layer_in = x
    for cell in params.cells:
        cfg = cell.config
        H = np.zeros((T + 1, B, cfg.d_h), dtype=dtype)
        bufs = {"H": H}
        if cfg.kind.projected:
            bufs["P"] = np.zeros((T + 1, B, cfg.d_p), dtype=dtype)
        if cfg.kind.is_lstm:
            bufs["C"] = np.zeros((T + 1, B, cfg.d_h), dtype=dtype)
        layer_caches = []
        out_buf = np.empty((T, B, cfg.out_dim), dtype=dtype)
        for t in range(1, T + 1):
            kw: dict = {}
            if cfg.kind.projected:
                kw["p_prev"] = bufs["P"][t - 1]
                if cfg.kind.uses_lag_n:
                    kw["p_lag_n"] = bufs["P"][max(t - cfg.n, 0)]
            else:
                kw["h_prev"] = H[t - 1]
                if cfg.kind.uses_lag_n:
                    kw["h_lag_n"] = H[max(t - cfg.n, 0)]
            if cfg.kind.uses_lag_m:
                kw["h_lag_m"] = H[max(t - cfg.m, 0)]
            if cfg.kind.is_lstm:
                kw["c_prev"] = bufs["C"][t - 1]
            out = step_forward(cell, layer_in[t - 1], **kw)
            H[t] = out.h
            if out.p is not None:
                bufs["P"][t] = out.p
                out_buf[t - 1] = out.p
            else:
                out_buf[t - 1] = out.h
            if out.c is not None:
                bufs["C"][t] = out.c
            layer_caches.append(out.cache)
        states.append(bufs)
        caches.append(layer_caches)
        layer_in = out_buf

    act = head_activation(params.config.layers[-1])
    hidden_a = layer_in @ params.hid_w.T + params.hid_b
    hidden = activate(act, hidden_a)
    logits = hidden @ params.out_w.T + params.out_b
    return UnfoldedStates(
        x=x, states=states, caches=caches, outputs=layer_in,
        hidden_a=hidden_a, hidden=hidden, logits=logits,
    )


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_xent(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray, int, int]:
    """Sum-reduced masked cross-entropy.

    Returns (loss, d_logits, n_correct, n_scored); ``mask`` weights each
    (step, sample) term and the gradient is exact for non-binary weights too.
    """
    z = logits - logits.max(axis=-1, keepdims=True)
    expz = np.exp(z)
    sumexp = expz.sum(axis=-1)
    logp_target = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0] - np.log(sumexp)
    loss = float(-(mask * logp_target).sum())
    if not np.isfinite(loss):
        raise NumericError("cross-entropy is not finite")
    probs = expz / sumexp[..., None]
    d_logits = probs * mask[..., None]
    idx = targets[..., None]
    np.put_along_axis(
        d_logits, idx, np.take_along_axis(d_logits, idx, axis=-1) - mask[..., None], axis=-1
    )
    scored = mask > 0
    pred = logits.argmax(axis=-1)
    n_correct = int(np.count_nonzero((pred == targets) & scored))
    return loss, d_logits, n_correct, int(np.count_nonzero(scored))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@dataclass
class GradientSet:
    """Gradient arrays mirroring NetworkParams, keyed like its flat tensors."""

    cells: list[dict]
    hid_w: np.ndarray
    hid_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientSet":
        return cls(
            cells=[{k: np.zeros_like(v) for k, v in c.tensors.items()} for c in params.cells],
            hid_w=np.zeros_like(params.hid_w),
            hid_b=np.zeros_like(params.hid_b),
            out_w=np.zeros_like(params.out_w),
            out_b=np.zeros_like(params.out_b),
        )

    def flat_tensors(self) -> dict:
        flat = {}
        for i, cell in enumerate(self.cells):
            for name, arr in cell.items():
                flat[f"layers.{i}.{name}"] = arr
        flat["head.Wh"] = self.hid_w
        flat["head.bh"] = self.hid_b
        flat["head.Wo"] = self.out_w
        flat["head.bo"] = self.out_b
        return flat


@dataclass
class BackwardResult:
    grads: GradientSet
    state_grads: list[dict] | None = None   # per layer {"H": dH, "P": dP, "C": dC}
    per_step_cell_grads: list[list[dict]] | None = None  # [step][layer] -> tensor dict


def bptt_backward(
    params: NetworkParams,
    fwd: UnfoldedStates,
    d_logits: np.ndarray,
    normalize_sharing: bool = True,
    return_state_grads: bool = False,
    collect_per_step: bool = False,
) -> BackwardResult:
    """Backpropagate through the unfolded window.

    Each hidden state accumulates gradient from every consumer: its direct
    successor, its lag-n successor, its lag-m successor when present, and
    the head.  With ``normalize_sharing`` the accumulated gradient of every
    cell tensor is divided by the window length, the number of steps that
    share it; the head tensors stay plain sums because the head contributes
    once per scored frame, not once per unfolded step.  ``collect_per_step``
    additionally records each step's raw contribution to the cell gradients
    so the equivalence sum/T == mean over steps can be checked from outside.
    """
    T, B, _ = fwd.x.shape
    grads = GradientSet.zeros_like(params)
    act = head_activation(params.config.layers[-1])
    d_hidden = d_logits @ params.out_w
    d_hidden_a = d_hidden * activate_grad(act, fwd.hidden_a)
    grads.out_w[...] = np.tensordot(d_logits, fwd.hidden, axes=[[0, 1], [0, 1]])
    grads.out_b[...] = d_logits.sum(axis=(0, 1))
    grads.hid_w[...] = np.tensordot(d_hidden_a, fwd.outputs, axes=[[0, 1], [0, 1]])
    grads.hid_b[...] = d_hidden_a.sum(axis=(0, 1))
    d_out = d_hidden_a @ params.hid_w  # (T, B, top_dim)

    per_step: list[list[dict]] | None = None
    if collect_per_step:
        per_step = [[{} for _ in params.cells] for _ in range(T)]

    state_grads: list[dict] = []
    for li in range(len(params.cells) - 1, -1, -1):
        cell = params.cells[li]
        cfg = cell.config
        dH = np.zeros((T + 1, B, cfg.d_h))
        dP = np.zeros((T + 1, B, cfg.d_p)) if cfg.kind.projected else None
        dC = np.zeros((T + 1, B, cfg.d_h)) if cfg.kind.is_lstm else None
        d_below = np.zeros((T, B, cfg.d_x)) if li > 0 else None
        acc = grads.cells[li]

        for t in range(T, 0, -1):
            if cfg.kind.projected:
                dP[t] += d_out[t - 1]
            else:
                dH[t] += d_out[t - 1]
            g = step_backward(
                cell,
                fwd.caches[li][t - 1],
                d_h=dH[t],
                d_c=dC[t] if dC is not None else None,
                d_p=dP[t] if dP is not None else None,
                need_dx=li > 0,
            )
            if g.d_h_prev is not None:
                dH[t - 1] += g.d_h_prev
            if g.d_h_lag_n is not None:
                dH[max(t - cfg.n, 0)] += g.d_h_lag_n
            if g.d_h_lag_m is not None:
                dH[max(t - cfg.m, 0)] += g.d_h_lag_m
            if g.d_p_prev is not None:
                dP[t - 1] += g.d_p_prev
            if g.d_p_lag_n is not None:
                dP[max(t - cfg.n, 0)] += g.d_p_lag_n
            if g.d_c_prev is not None:
                dC[t - 1] += g.d_c_prev
            if d_below is not None:
                d_below[t - 1] = g.d_x
            for name, val in g.params.items():
                acc[name] += val
            if per_step is not None:
                per_step[t - 1][li] = {k: v.copy() for k, v in g.params.items()}

        if return_state_grads:
            entry = {"H": dH}
            if dP is not None:
                entry["P"] = dP
            if dC is not None:
                entry["C"] = dC
            state_grads.append(entry)
        if li > 0:
            d_out = d_below

    if normalize_sharing:
        for acc in grads.cells:
            for name in acc:
                acc[name] /= T

    state_grads.reverse()
    return BackwardResult(
        grads=grads,
        state_grads=state_grads if return_state_grads else None,
        per_step_cell_grads=per_step,
    )


def window_loss_and_grads(
    params: NetworkParams,
    x: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    normalize_sharing: bool = True,
) -> tuple[float, GradientSet, int, int]:
    """Forward + loss + backward in one call; the common training path."""
    fwd = unfold_forward(params, x)
    loss, d_logits, n_correct, n_scored = softmax_xent(fwd.logits, targets, mask)
    back = bptt_backward(params, fwd, d_logits, normalize_sharing=normalize_sharing)
    return loss, back.grads, n_correct, n_scored


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    unfold_steps: int = 20
    clip_threshold: float = 0.32
    clip_ref_batch: int = 800
    target_delay: int = 5
    learning_rate_init: float = 0.1
    weight_decay: float = 0.0
    minibatch_frames: int = 800
    seed: int = 1
    ramp: float = 0.005
    stop: float = 0.001
    max_epochs: int = 30
    train_activation_scale: bool = True

    def __post_init__(self):
        if self.unfold_steps < 1:
            raise ConfigError(f"unfold_steps must be >= 1, got {self.unfold_steps}")
        if self.minibatch_frames < 1:
            raise ConfigError(f"minibatch_frames must be >= 1, got {self.minibatch_frames}")
        if self.learning_rate_init < 0:
            raise ConfigError(f"learning_rate_init must be >= 0, got {self.learning_rate_init}")
        if self.clip_threshold <= 0 or self.clip_ref_batch <= 0:
            raise ConfigError("clip_threshold and clip_ref_batch must be positive")
        if self.target_delay < 0:
            raise ConfigError(f"target_delay must be >= 0, got {self.target_delay}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")

    def tau(self, minibatch_frames: int) -> float:
        """Clip threshold scaled to the actual minibatch frame count."""
        return self.clip_threshold * minibatch_frames / self.clip_ref_batch

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def clip_and_update(
    params: NetworkParams,
    grads: GradientSet,
    lr: float,
    cfg: TrainConfig,
    minibatch_frames: int,
) -> float:
    """Apply params += clamp(-lr * (grad + decay * param), [-tau, tau]).

    Weight decay touches 2-D weight matrices only, never biases, peepholes,
    or activation scales.  Clamping preserves the sign of every component.
    Non-finite gradients abort with an error rather than corrupting the
    model.  Returns the fraction of components that hit the clamp.
    """
    tau = cfg.tau(minibatch_frames)
    flat_p = params.flat_tensors()
    flat_g = grads.flat_tensors()
    clipped = 0
    total = 0
    for path, p in flat_p.items():
        g = flat_g[path]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {path}; aborting the update")
        if not cfg.train_activation_scale and path.endswith(".beta"):
            continue
        if cfg.weight_decay != 0.0 and is_weight_matrix(path, p.shape):
            u = -lr * (g + cfg.weight_decay * p)
        else:
            u = -lr * g
        clipped += int(np.count_nonzero(np.abs(u) > tau))
        total += u.size
        np.clip(u, -tau, tau, out=u)
        p += u
    return clipped / max(total, 1)


# ---------------------------------------------------------------------------
# scheduler
# ---------------------------------------------------------------------------

@dataclass
class Schedule:
    """Validation-driven halving schedule over epochs.

    Tracks the learning rate and validation loss per epoch.  The relative
    improvement (prev - cur) / prev drives two latches: below ``ramp`` the
    schedule enters halving mode (rate halves every subsequent epoch, the
    latch never clears); below ``stop`` while already halving, training
    stops.  Learning rates never increase.
    """

    lrs: list[float]
    ramp: float = 0.005
    stop: float = 0.001
    halving: bool = False
    stopped: bool = False
    losses: list[float] = field(default_factory=list)

    @classmethod
    def fresh(cls, lr_init: float, ramp: float = 0.005, stop: float = 0.001) -> "Schedule":
        return cls(lrs=[lr_init], ramp=ramp, stop=stop)

    @property
    def lr(self) -> float:
        return self.lrs[-1]

    def to_dict(self) -> dict:
        return {
            "lrs": self.lrs, "ramp": self.ramp, "stop": self.stop,
            "halving": self.halving, "stopped": self.stopped, "losses": self.losses,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(
            lrs=[float(v) for v in d["lrs"]],
            ramp=float(d["ramp"]),
            stop=float(d["stop"]),
            halving=bool(d["halving"]),
            stopped=bool(d["stopped"]),
            losses=[float(v) for v in d["losses"]],
        )


def newbob_step(sched: Schedule, validation_loss: float) -> tuple[float, bool]:
    """Record an epoch's validation loss and return (next learning rate, stop flag)."""
    if not np.isfinite(validation_loss):
        raise NumericError("validation loss is not finite")
    if sched.stopped:
        return sched.lr, True
    if not sched.losses:
        sched.losses.append(validation_loss)
        sched.lrs.append(sched.lr)
        return sched.lr, False
    prev = sched.losses[-1]
    improvement = (prev - validation_loss) / abs(prev) if prev != 0.0 else 0.0
    sched.losses.append(validation_loss)
    if sched.halving:
        if improvement < sched.stop:
            sched.stopped = True
            sched.lrs.append(sched.lr)
            return sched.lr, True
        sched.lrs.append(sched.lr / 2.0)
        return sched.lr, False
    if improvement < sched.ramp:
        sched.halving = True
        sched.lrs.append(sched.lr / 2.0)
    else:
        sched.lrs.append(sched.lr)
    return sched.lr, False


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

Sequence = tuple[np.ndarray, np.ndarray]  # frames (T, d) float64, labels (T,) int


def _gather_windows(
    sequences: list[Sequence], items: list[tuple[int, int]], T: int, d_in: int
) -> tuple[np.ndarray, np.ndarray]:
    """Build the (T, B, d_in) batch for frame-level samples (seq index, frame index).

    Each sample is the window of T frames ending at its frame, zero-padded
    on the left when it would cross the sequence start; the label is the
    frame's own.
    """
    B = len(items)
    x = np.zeros((T, B, d_in))
    y_last = np.empty(B, dtype=np.int64)
    for j, (si, fi) in enumerate(items):
        frames, labels = sequences[si]
        start = max(fi - T + 1, 0)
        valid = fi - start + 1
        x[T - valid:, j, :] = frames[start:fi + 1]
        y_last[j] = labels[fi]
    return x, y_last


def _frame_index(sequences: list[Sequence]) -> list[tuple[int, int]]:
    return [(si, fi) for si, (frames, _) in enumerate(sequences) for fi in range(len(frames))]


def _last_step_batch(T: int, y_last: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    B = len(y_last)
    targets = np.zeros((T, B), dtype=np.int64)
    targets[T - 1] = y_last
    mask = np.zeros((T, B))
    mask[T - 1] = 1.0
    return targets, mask


@dataclass
class EpochStats:
    ce: float        # mean cross-entropy per scored frame
    frame_acc: float
    clipped_fraction: float = 0.0


def train_epoch(
    params: NetworkParams,
    sequences: list[Sequence],
    cfg: TrainConfig,
    sched: Schedule,
    rng: np.random.Generator,
) -> EpochStats:
    """One pass of frame-shuffled truncated-BPTT updates; mutates params."""
    items = _frame_index(sequences)
    if not items:
        raise ConfigError("training set has no frames")
    order = rng.permutation(len(items))
    T, d_in = cfg.unfold_steps, params.config.d_in
    lr = sched.lr
    total_loss = 0.0
    total_correct = 0
    total_scored = 0
    clip_acc = 0.0
    n_batches = 0
    for lo in range(0, len(order), cfg.minibatch_frames):
        batch_items = [items[k] for k in order[lo:lo + cfg.minibatch_frames]]
        x, y_last = _gather_windows(sequences, batch_items, T, d_in)
        targets, mask = _last_step_batch(T, y_last)
        loss, grads, n_correct, n_scored = window_loss_and_grads(params, x, targets, mask)
        clip_acc += clip_and_update(params, grads, lr, cfg, len(batch_items))
        total_loss += loss
        total_correct += n_correct
        total_scored += n_scored
        n_batches += 1
    return EpochStats(
        ce=total_loss / total_scored,
        frame_acc=total_correct / total_scored,
        clipped_fraction=clip_acc / n_batches,
    )


def evaluate(
    params: NetworkParams,
    sequences: list[Sequence],
    unfold_steps: int,
    batch_frames: int = 2048,
) -> EpochStats:
    """Score every frame with the same windowed construction used in training."""
    items = _frame_index(sequences)
    if not items:
        raise ConfigError("evaluation set has no frames")
    T, d_in = unfold_steps, params.config.d_in
    total_loss = 0.0
    total_correct = 0
    total_scored = 0
    for lo in range(0, len(items), batch_frames):
        batch_items = items[lo:lo + batch_frames]
        x, y_last = _gather_windows(sequences, batch_items, T, d_in)
        targets, mask = _last_step_batch(T, y_last)
        fwd = unfold_forward(params, x)
        loss, _, n_correct, n_scored = softmax_xent(fwd.logits, targets, mask)
        total_loss += loss
        total_correct += n_correct
        total_scored += n_scored
    return EpochStats(ce=total_loss / total_scored, frame_acc=total_correct / total_scored)


@dataclass
class TrainResult:
    params: NetworkParams
    log_rows: list[dict] = field(default_factory=list)
    schedule: Schedule | None = None
    epochs_run: int = 0
    stopped_early: bool = False


def run_training(
    params: NetworkParams,
    train_seqs: list[Sequence],
    valid_seqs: list[Sequence],
    cfg: TrainConfig,
    epoch_callback=None,
    rng: np.random.Generator | None = None,
    schedule: Schedule | None = None,
    start_epoch: int = 1,
) -> TrainResult:
    """Epoch loop: train, validate, log, and advance the halving schedule.

    The target delay is a data-preparation step; sequences arriving here
    must already be shifted.  ``epoch_callback(row)`` sees each log row as
    a dict with the column order epoch, lr, train_ce, train_facc, valid_ce,
    valid_facc; returning False from it ends training after that epoch.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    sched = schedule if schedule is not None else Schedule.fresh(
        cfg.learning_rate_init, cfg.ramp, cfg.stop
    )
    result = TrainResult(params=params, schedule=sched)
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        lr = sched.lr
        train_stats = train_epoch(params, train_seqs, cfg, sched, rng)
        valid_stats = evaluate(params, valid_seqs, cfg.unfold_steps)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_ce": train_stats.ce,
            "train_facc": train_stats.frame_acc,
            "valid_ce": valid_stats.ce,
            "valid_facc": valid_stats.frame_acc,
        }
        result.log_rows.append(row)
        result.epochs_run = epoch
        _, stop = newbob_step(sched, valid_stats.ce)
        if epoch_callback is not None and epoch_callback(row) is False:
            break
        if stop:
            result.stopped_early = True
            break
    return result
