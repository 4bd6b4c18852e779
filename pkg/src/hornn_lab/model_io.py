"""Model serialization: one flat binary file, self-describing.

Layout: magic ``HLM1``; little-endian u32 header length; a UTF-8 JSON
header; then the concatenated float64 little-endian tensor data.  The
header carries the network configuration, a manifest naming every tensor
with its shape and byte offset into the data blob, and an optional ``extra``
object.  Checkpoints are the same file with scheduler state, training
configuration, epoch, and the shuffling RNG state stored under ``extra``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .cells import CellParams, tensor_shapes
from .engine import Schedule, TrainConfig
from .errors import ConfigError
from .network import NetworkConfig, NetworkParams

_MAGIC = b"HLM1"


def save_model(params: NetworkParams, path, extra: dict | None = None) -> None:
    flat = params.flat_tensors()
    manifest = []
    chunks = []
    offset = 0
    for tensor_path, arr in flat.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"path": tensor_path, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "network": params.config.to_dict(),
        "tensors": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_model(path) -> tuple[NetworkParams, dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file {path} does not exist")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ConfigError(f"{path}: not a model file (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + hlen].decode("utf-8"))
    body = data[8 + hlen:]
    net_cfg = NetworkConfig.from_dict(header["network"])

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(body[start:start + n * 8], dtype="<f8").reshape(shape).copy()
        tensors[entry["path"]] = arr

    cells = []
    for i, layer_cfg in enumerate(net_cfg.layers):
        ordered = OrderedDict()
        for name in tensor_shapes(layer_cfg):
            key = f"layers.{i}.{name}"
            if key not in tensors:
                raise ConfigError(f"model file is missing tensor {key}")
            ordered[name] = tensors[key]
        cells.append(CellParams(layer_cfg, ordered))
    for key in ("head.Wh", "head.bh", "head.Wo", "head.bo"):
        if key not in tensors:
            raise ConfigError(f"model file is missing tensor {key}")
    params = NetworkParams(
        net_cfg, cells,
        tensors["head.Wh"], tensors["head.bh"], tensors["head.Wo"], tensors["head.bo"],
    )
    return params, header.get("extra", {})


def save_checkpoint(
    params: NetworkParams,
    path,
    schedule: Schedule,
    train_config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
    log_rows: list[dict] | None = None,
) -> None:
    """Everything needed to resume: parameters plus scheduler/config/shuffle state."""
    extra = {
        "checkpoint": {
            "schedule": schedule.to_dict(),
            "train_config": train_config.to_dict(),
            "epoch": epoch,
            "rng_state": rng.bit_generator.state,
            "log_rows": log_rows or [],
        }
    }
    save_model(params, path, extra=extra)


def load_checkpoint(path) -> tuple[NetworkParams, Schedule, TrainConfig, int, np.random.Generator]:
    params, extra = load_model(path)
    if "checkpoint" not in extra:
        raise ConfigError(f"{path} is a plain model file, not a checkpoint")
    ck = extra["checkpoint"]
    schedule = Schedule.from_dict(ck["schedule"])
    train_config = TrainConfig.from_dict(ck["train_config"])
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = ck["rng_state"]
    return params, schedule, train_config, int(ck["epoch"]), rng
