"""Operation layer: one function per command, shared by the service and the CLI.

Runners accept plain JSON-able inputs, do the work, optionally write the
fixed-name output files under an output directory, and return JSON-able
results.  Nothing here prints or exits; callers translate errors.

``HORNN_LAB_THREADS`` caps the worker count used for the embarrassingly
parallel diagnostics (per-seed lag curves).
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .cells import CellConfig, parse_kind
from .cost_model import cost_report
from .data_tasks import (
    SequenceBatch,
    TaskSpec,
    delta_expand,
    generate,
    normalize,
    prepare_sequences,
    read_dataset,
    write_dataset,
)
from .engine import Schedule, TrainConfig, evaluate, run_training
from .errors import ConfigError
from .grad_lab import config_label, decay_compare, finite_diff_check
from .model_io import load_checkpoint, load_model, save_checkpoint, save_model
from .network import NetworkConfig, init_network

GRADCHECK_TOLERANCE = 1e-6

ALL_KINDS = (
    "rnn", "lstm", "lstmp", "hornn_relu", "hornn_sigmoid",
    "hornnp_relu", "hornnp_sigmoid", "resrnn",
)

LOG_COLUMNS = ("epoch", "lr", "train_ce", "train_facc", "valid_ce", "valid_facc")


def worker_count() -> int:
    """Worker cap from HORNN_LAB_THREADS; defaults to a small multiple of the CPUs."""
    raw = os.environ.get("HORNN_LAB_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"HORNN_LAB_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"HORNN_LAB_THREADS must be >= 1, got {n}")
        return n
    return min(4, os.cpu_count() or 1)


def _out_path(out_dir, name: str) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p / name


def layer_configs(layer_dicts: list[dict]) -> list[CellConfig]:
    if not layer_dicts:
        raise ConfigError("at least one layer is required")
    return [CellConfig.from_dict(d) for d in layer_dicts]


def stack_from_flags(
    kind: str, d_x: int, d_h: int, d_p: int = 0,
    n: int | None = None, m: int | None = None,
    activation: str | None = None, layers: int = 1,
) -> list[CellConfig]:
    """Replicate one layer spec into a chained stack (layer i>0 consumes layer i-1's output)."""
    if layers < 1:
        raise ConfigError(f"layers must be >= 1, got {layers}")
    first = CellConfig(parse_kind(kind), d_x=d_x, d_h=d_h, d_p=d_p, n=n, m=m, activation=activation)
    stack = [first]
    for _ in range(layers - 1):
        prev = stack[-1]
        stack.append(CellConfig(prev.kind, d_x=prev.out_dim, d_h=d_h, d_p=d_p, n=n, m=m,
                                activation=activation))
    return stack


# ---------------------------------------------------------------------------
# count / flops
# ---------------------------------------------------------------------------

def run_count(configs: list[CellConfig], out_dir=None, write_csv: bool = False) -> dict:
    report = cost_report(configs)
    payload = report.to_dict()
    files = []
    if out_dir is not None:
        path = _out_path(out_dir, "cost.json")
        path.write_text(_stable_json(payload) + "\n", encoding="utf-8")
        files.append(str(path))
        if write_csv:
            cpath = Path(out_dir) / "cost.csv"
            with open(cpath, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(report.per_layer[0].keys()))
                writer.writeheader()
                writer.writerows(report.per_layer)
            files.append(str(cpath))
    return {"report": payload, "files": files}


def _stable_json(obj) -> str:
    import json

    return json.dumps(obj, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def run_gradcheck(
    kinds: list[str] | None = None,
    seed: int = 1,
    d_x: int = 3,
    d_h: int = 4,
    d_p: int = 2,
    T: int = 12,
    corrupt: bool = False,
    out_dir=None,
) -> dict:
    """Finite-difference sweep; ok iff every kind's max relative error is under 1e-6."""
    if d_h > 16 or T > 32:
        raise ConfigError(f"gradcheck is desk-scale only (d_h <= 16, T <= 32), got d_h={d_h}, T={T}")
    names = list(kinds) if kinds else list(ALL_KINDS)
    results = {}
    for name in names:
        kind = parse_kind(name)
        cfg = CellConfig(kind, d_x=d_x, d_h=d_h, d_p=d_p if kind.projected else 0)
        results[kind.value] = finite_diff_check(cfg, seed=seed, T=T, corrupt=corrupt)
    worst = max(results.values())
    payload = {
        "results": results,
        "max_rel_err": worst,
        "tolerance": GRADCHECK_TOLERANCE,
        "ok": bool(worst < GRADCHECK_TOLERANCE),
        "seed": seed,
        "dims": {"d_x": d_x, "d_h": d_h, "d_p": d_p, "T": T},
    }
    files = []
    if out_dir is not None:
        path = _out_path(out_dir, "gradcheck.json")
        path.write_text(_stable_json(payload) + "\n", encoding="utf-8")
        files.append(str(path))
    payload["files"] = files
    return payload


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _load_batches(spec: dict) -> list[SequenceBatch]:
    if "manifest" in spec:
        return read_dataset(spec["manifest"])
    return generate(TaskSpec.from_dict(spec["task"]))


def _pipeline(batches: list[SequenceBatch], use_delta: bool, use_normalize: bool) -> list[SequenceBatch]:
    if use_delta:
        batches = [
            SequenceBatch(delta_expand(b.frames), b.labels, b.n_classes, b.utterance_id, b.segment_id)
            for b in batches
        ]
    if use_normalize:
        batches = normalize(batches)
    return batches


def _split(batches: list[SequenceBatch], valid_fraction: float) -> tuple[list, list]:
    if not 0.0 < valid_fraction < 1.0:
        raise ConfigError(f"valid_fraction must be in (0, 1), got {valid_fraction}")
    n_valid = max(1, int(round(len(batches) * valid_fraction)))
    if n_valid >= len(batches):
        raise ConfigError("validation split would consume the whole dataset")
    return batches[:-n_valid], batches[-n_valid:]


def experiment_from_dict(config: dict) -> dict:
    """Validate and normalize an experiment description.

    Expected keys: layers (list of cell configs), n_classes, train
    (TrainConfig fields), and a data source: either task (TaskSpec fields,
    with valid_fraction) or manifests train_manifest/valid_manifest.
    Optional: init_seed, init_scale, delta, normalize.
    """
    known = {
        "layers", "n_classes", "train", "task", "train_manifest", "valid_manifest",
        "valid_fraction", "init_seed", "init_scale", "delta", "normalize",
    }
    extra = set(config) - known
    if extra:
        raise ConfigError(f"unknown experiment options: {sorted(extra)}")
    for key in ("layers", "n_classes"):
        if key not in config:
            raise ConfigError(f"experiment config is missing {key!r}")
    has_task = "task" in config
    has_manifests = "train_manifest" in config or "valid_manifest" in config
    if has_task == has_manifests:
        raise ConfigError("provide either a task block or train/valid manifests, not both")
    if has_manifests and ("train_manifest" not in config or "valid_manifest" not in config):
        raise ConfigError("manifest mode needs both train_manifest and valid_manifest")
    layers = layer_configs(config["layers"])
    net_cfg = NetworkConfig(layers=layers, n_classes=int(config["n_classes"]))
    train_cfg = TrainConfig.from_dict(config.get("train", {}))
    if train_cfg.unfold_steps < net_cfg.max_lag:
        raise ConfigError(
            f"unfold window {train_cfg.unfold_steps} is shorter than the longest lag {net_cfg.max_lag}"
        )
    return {
        "net": net_cfg,
        "train": train_cfg,
        "config": config,
        "init_seed": int(config.get("init_seed", train_cfg.seed)),
        "init_scale": float(config.get("init_scale", 0.05)),
        "delta": bool(config.get("delta", False)),
        "normalize": bool(config.get("normalize", False)),
    }


def _check_data_fit(net_cfg: NetworkConfig, batches: list[SequenceBatch]) -> None:
    if not batches:
        raise ConfigError("dataset is empty")
    dim = batches[0].dim
    if dim != net_cfg.d_in:
        raise ConfigError(f"data dimension {dim} does not match network input {net_cfg.d_in}")
    top = max(int(b.labels.max()) for b in batches if b.labels.size)
    if top >= net_cfg.n_classes:
        raise ConfigError(f"label {top} out of range for {net_cfg.n_classes} classes")


def run_train(config: dict, out_dir=None, resume=None) -> dict:
    """Train per the experiment config; writes train_log.csv, model.bin, checkpoint.bin."""
    exp = experiment_from_dict(config)
    net_cfg: NetworkConfig = exp["net"]
    train_cfg: TrainConfig = exp["train"]

    if "task" in config:
        batches = _pipeline(generate(TaskSpec.from_dict(config["task"])), exp["delta"], exp["normalize"])
        train_batches, valid_batches = _split(batches, float(config.get("valid_fraction", 0.1)))
    else:
        train_batches = _pipeline(read_dataset(config["train_manifest"]), exp["delta"], exp["normalize"])
        valid_batches = _pipeline(read_dataset(config["valid_manifest"]), exp["delta"], exp["normalize"])
    _check_data_fit(net_cfg, train_batches)
    _check_data_fit(net_cfg, valid_batches)
    train_seqs = prepare_sequences(train_batches, train_cfg.target_delay)
    valid_seqs = prepare_sequences(valid_batches, train_cfg.target_delay)

    prior_rows: list[dict] = []
    if resume is not None:
        params, schedule, saved_cfg, epoch_done, rng = load_checkpoint(resume)
        if params.config.to_dict() != net_cfg.to_dict():
            raise ConfigError("checkpoint network does not match the experiment config")
        # the request's train block wins so caps can be raised on resume;
        # the checkpoint fills in when the request has none
        if "train" not in config:
            train_cfg = saved_cfg
        _, ck_extra = load_model(resume)
        prior_rows = ck_extra["checkpoint"].get("log_rows", [])
        start_epoch = epoch_done + 1
    else:
        params = init_network(net_cfg, exp["init_seed"], exp["init_scale"])
        schedule = Schedule.fresh(train_cfg.learning_rate_init, train_cfg.ramp, train_cfg.stop)
        rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
        start_epoch = 1

    rows = list(prior_rows)
    ck_path = _out_path(out_dir, "checkpoint.bin") if out_dir is not None else None

    def on_epoch(row: dict):
        rows.append(row)
        if ck_path is not None:
            save_checkpoint(params, ck_path, schedule, train_cfg, row["epoch"], rng, log_rows=rows)

    result = run_training(
        params, train_seqs, valid_seqs, train_cfg,
        epoch_callback=on_epoch, rng=rng, schedule=schedule, start_epoch=start_epoch,
    )

    files = []
    if out_dir is not None:
        log_path = _out_path(out_dir, "train_log.csv")
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS))
            writer.writeheader()
            writer.writerows(rows)
        model_path = _out_path(out_dir, "model.bin")
        save_model(params, model_path, extra={"train_config": train_cfg.to_dict()})
        files += [str(log_path), str(model_path), str(ck_path)]

    final = rows[-1] if rows else {}
    return {
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
        "final": final,
        "log_rows": rows,
        "files": files,
    }


def run_eval(model_path, manifest_path, target_delay: int | None = None,
             use_delta: bool = False, use_normalize: bool = False) -> dict:
    """Frame accuracy and mean cross-entropy of a saved model over a dataset."""
    params, extra = load_model(model_path)
    saved = extra.get("train_config", {})
    delay = saved.get("target_delay", 0) if target_delay is None else target_delay
    unfold = saved.get("unfold_steps", 20)
    batches = _pipeline(read_dataset(manifest_path), use_delta, use_normalize)
    _check_data_fit(params.config, batches)
    seqs = prepare_sequences(batches, delay)
    stats = evaluate(params, seqs, unfold)
    return {
        "frame_acc": stats.frame_acc,
        "mean_ce": stats.ce,
        "frames": sum(len(labels) for _, labels in seqs),
        "target_delay": delay,
        "unfold_steps": unfold,
    }


# ---------------------------------------------------------------------------
# lag curves
# ---------------------------------------------------------------------------

def run_lagcurve(
    configs: list[CellConfig],
    seeds: list[int],
    K: int,
    probe_len: int | None = None,
    n_classes: int = 4,
    init_scale: float = 0.05,
    out_dir=None,
) -> dict:
    """Decay comparison across architectures; configs[0] is the baseline."""
    result = decay_compare(
        configs, seeds, K,
        probe_len=probe_len, n_classes=n_classes, init_scale=init_scale,
        max_workers=worker_count(),
    )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["kind", "seed", "k", "g_k"])
    for entry in result.entries:
        for k, g in enumerate(entry.norms):
            writer.writerow([entry.label, entry.seed, k, repr(float(g))])
    csv_text = buf.getvalue()

    summary = result.to_summary()
    summary["rates"] = [
        {"label": e.label, "kind": e.kind, "activation": e.activation,
         "seed": e.seed, "decay_rate": (None if np.isnan(e.decay_rate) else e.decay_rate)}
        for e in result.entries
    ]
    files = []
    if out_dir is not None:
        cpath = _out_path(out_dir, "lagcurve.csv")
        cpath.write_text(csv_text, encoding="utf-8")
        spath = Path(out_dir) / "lagcurve_summary.json"
        spath.write_text(_stable_json(summary) + "\n", encoding="utf-8")
        files = [str(cpath), str(spath)]
    return {"summary": summary, "csv": csv_text, "files": files,
            "labels": [config_label(i, c) for i, c in enumerate(configs)]}


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------

def run_gen_data(
    task: dict, out_dir, use_delta: bool = False, use_normalize: bool = False,
    target_delay: int = 0,
) -> dict:
    """Generate a synthetic dataset and write it as FSQ1 files plus a manifest."""
    if out_dir is None:
        raise ConfigError("gen-data needs an output directory")
    batches = _pipeline(generate(TaskSpec.from_dict(task)), use_delta, use_normalize)
    if target_delay:
        from .data_tasks import apply_delay

        batches = [apply_delay(b, target_delay) for b in batches]
    manifest = write_dataset(batches, out_dir)
    return {
        "manifest": str(manifest),
        "utterances": len(batches),
        "frames": sum(b.seq_len for b in batches),
        "dim": batches[0].dim,
        "n_classes": batches[0].n_classes,
    }
