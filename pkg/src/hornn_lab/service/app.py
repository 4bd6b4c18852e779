"""HTTP service over the runner layer.

Configuration problems surface as 422 and numeric/runtime failures as 500,
so clients can map status codes onto exit codes.  Paths in requests refer to
the serving process's filesystem; the bundled CLI talks to an in-process
instance by default, where that is the local filesystem.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import runners
from ..cells import CellConfig, parse_kind
from ..errors import ConfigError, HornnLabError
from . import schemas

app = FastAPI(title="hornn-lab", version="0.1.0")


@app.exception_handler(ConfigError)
async def config_error_handler(request: Request, exc: ConfigError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(HornnLabError)
async def lab_error_handler(request: Request, exc: HornnLabError):
    return JSONResponse(status_code=500, content={"detail": str(exc)})


def _cell_configs(layers: list[schemas.LayerSpec]) -> list[CellConfig]:
    return [
        CellConfig(
            kind=parse_kind(spec.kind),
            d_x=spec.d_x,
            d_h=spec.d_h,
            d_p=spec.d_p,
            n=spec.n,
            m=spec.m,
            activation=spec.activation,
        )
        for spec in layers
    ]


@app.get("/health")
async def health() -> dict:
    return {"status": "ok"}


@app.post("/count", response_model=schemas.CountResponse)
async def count(req: schemas.CountRequest) -> dict:
    return runners.run_count(_cell_configs(req.layers), out_dir=req.out_dir, write_csv=req.csv)


@app.post("/gradcheck", response_model=schemas.GradcheckResponse)
async def gradcheck(req: schemas.GradcheckRequest) -> dict:
    return runners.run_gradcheck(
        kinds=req.kinds, seed=req.seed, d_x=req.d_x, d_h=req.d_h, d_p=req.d_p,
        T=req.T, corrupt=req.corrupt, out_dir=req.out_dir,
    )


@app.post("/train", response_model=schemas.TrainResponse)
async def train(req: schemas.TrainRequest) -> dict:
    return runners.run_train(req.config, out_dir=req.out_dir, resume=req.resume)


@app.post("/eval", response_model=schemas.EvalResponse)
async def eval_model(req: schemas.EvalRequest) -> dict:
    return runners.run_eval(
        req.model_path, req.manifest_path, target_delay=req.target_delay,
        use_delta=req.delta, use_normalize=req.normalize,
    )


@app.post("/lagcurve", response_model=schemas.LagcurveResponse)
async def lagcurve(req: schemas.LagcurveRequest) -> dict:
    return runners.run_lagcurve(
        _cell_configs(req.configs), req.seeds, req.K,
        probe_len=req.probe_len, n_classes=req.n_classes,
        init_scale=req.init_scale, out_dir=req.out_dir,
    )


@app.post("/gen-data", response_model=schemas.GenDataResponse)
async def gen_data(req: schemas.GenDataRequest) -> dict:
    return runners.run_gen_data(
        req.task, req.out_dir, use_delta=req.delta,
        use_normalize=req.normalize, target_delay=req.target_delay,
    )
