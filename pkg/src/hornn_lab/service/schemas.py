"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class LayerSpec(BaseModel):
    """One recurrent layer; mirrors the cell configuration."""

    model_config = ConfigDict(extra="forbid")

    kind: str
    d_x: int
    d_h: int
    d_p: int = 0
    n: int | None = None
    m: int | None = None
    activation: str | None = None


class CountRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: list[LayerSpec] = Field(min_length=1)
    out_dir: str | None = None
    csv: bool = False


class CountResponse(BaseModel):
    report: dict
    files: list[str]


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kinds: list[str] | None = None
    seed: int = 1
    d_x: int = 3
    d_h: int = 4
    d_p: int = 2
    T: int = 12
    corrupt: bool = False
    out_dir: str | None = None


class GradcheckResponse(BaseModel):
    results: dict
    max_rel_err: float
    tolerance: float
    ok: bool
    seed: int
    dims: dict
    files: list[str]


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict
    out_dir: str | None = None
    resume: str | None = None


class TrainResponse(BaseModel):
    epochs_run: int
    stopped_early: bool
    final: dict
    log_rows: list[dict]
    files: list[str]


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_path: str
    manifest_path: str
    target_delay: int | None = None
    delta: bool = False
    normalize: bool = False


class EvalResponse(BaseModel):
    frame_acc: float
    mean_ce: float
    frames: int
    target_delay: int
    unfold_steps: int


class LagcurveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    configs: list[LayerSpec] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    K: int
    probe_len: int | None = None
    n_classes: int = 4
    init_scale: float = 0.05
    out_dir: str | None = None


class LagcurveResponse(BaseModel):
    summary: dict
    csv: str
    files: list[str]
    labels: list[str]


class GenDataRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: dict
    out_dir: str
    delta: bool = False
    normalize: bool = False
    target_delay: int = 0


class GenDataResponse(BaseModel):
    manifest: str
    utterances: int
    frames: int
    dim: int
    n_classes: int
