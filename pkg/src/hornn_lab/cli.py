"""Command-line client for the lab service.

Every command is a thin HTTP client: by default it talks to an in-process
instance of the service (no network, same filesystem), and with --server it
targets a running instance instead, in which case paths in arguments refer
to the server's filesystem.  Exit codes: 0 success, 1 runtime or numeric
failure, 2 configuration error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import ConfigError


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


class ServiceClient:
    """POSTs to either an in-process app instance or a remote server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None
        self._client = None

    def _ensure(self):
        if self._client is None:
            if self.server:
                import httpx

                self._client = httpx.Client(base_url=self.server, timeout=None)
            else:
                import warnings

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    from fastapi.testclient import TestClient

                from .service import app

                self._client = TestClient(app, raise_server_exceptions=False)
        return self._client

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        client = self._ensure()
        try:
            resp = client.post(path, json=payload)
        except Exception as exc:
            click.echo(f"error: cannot reach the service: {exc}", err=True)
            sys.exit(1)
        try:
            body = resp.json()
        except ValueError:
            body = {"detail": resp.text}
        return resp.status_code, body


def _call(ctx: click.Context, path: str, payload: dict) -> dict:
    status, body = ctx.obj.post(path, payload)
    if status == 200:
        return body
    detail = body.get("detail", body)
    click.echo(f"error: {detail}", err=True)
    sys.exit(2 if status in (400, 404, 422) else 1)


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    fp = Path(path)
    if not fp.exists():
        click.echo(f"error: config file {path} does not exist", err=True)
        sys.exit(2)
    try:
        return json.loads(fp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        click.echo(f"error: {path} is not valid JSON: {exc}", err=True)
        sys.exit(2)


def _layers_payload(config_file, kind, dx, dh, dp, n, m, activation, layers) -> list[dict]:
    """Layer list from flags, or from a config file when no --kind is given."""
    if kind is None:
        file_cfg = _load_json(config_file)
        if "layers" not in file_cfg:
            click.echo("error: provide --kind or a --config file with a layers list", err=True)
            sys.exit(2)
        return file_cfg["layers"]
    stack = []
    prev_out = dx
    for i in range(layers):
        spec = {"kind": kind, "d_x": prev_out, "d_h": dh, "d_p": dp}
        if n is not None:
            spec["n"] = n
        if m is not None:
            spec["m"] = m
        if activation is not None:
            spec["activation"] = activation
        stack.append(spec)
        prev_out = dp if dp else dh
    return stack


def _cost_options(fn):
    opts = [
        click.option("--config", "config_file", type=str, default=None,
                     help="JSON file with a layers list (flags override it)."),
        click.option("--kind", type=str, default=None, help="Cell kind for a flag-built stack."),
        click.option("--dx", type=int, default=80, show_default=True),
        click.option("--dh", type=int, default=500, show_default=True),
        click.option("--dp", type=int, default=0, show_default=True),
        click.option("--n", type=int, default=None, help="High-order lag."),
        click.option("--m", type=int, default=None, help="Shortcut lag."),
        click.option("--activation", type=str, default=None),
        click.option("--layers", type=int, default=1, show_default=True,
                     help="Replicate the layer into a chained stack."),
        click.option("--out", "out_dir", type=str, default=None, help="Write cost.json here."),
        click.option("--csv", is_flag=True, help="Also write a per-layer cost.csv."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
@click.option("--server", type=str, default=None,
              help="Base URL of a running service; default runs in process.")
@click.pass_context
def main(ctx, server):
    """Recurrent-network laboratory: cost model, gradient diagnostics, training."""
    ctx.obj = ServiceClient(server)


@main.command()
@_cost_options
@click.pass_context
def count(ctx, config_file, kind, dx, dh, dp, n, m, activation, layers, out_dir, csv):
    """Exact parameter counts for a layer stack."""
    payload = {
        "layers": _layers_payload(config_file, kind, dx, dh, dp, n, m, activation, layers),
        "out_dir": out_dir,
        "csv": csv,
    }
    body = _call(ctx, "/count", payload)
    _echo_json(body["report"])


@main.command()
@_cost_options
@click.pass_context
def flops(ctx, config_file, kind, dx, dh, dp, n, m, activation, layers, out_dir, csv):
    """Per-frame multiply-add counts for a layer stack."""
    payload = {
        "layers": _layers_payload(config_file, kind, dx, dh, dp, n, m, activation, layers),
        "out_dir": out_dir,
        "csv": csv,
    }
    body = _call(ctx, "/count", payload)
    _echo_json(body["report"])


@main.command()
@click.option("--kind", "kinds", type=str, multiple=True,
              help="Cell kind to check; repeatable. Default: all eight.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--dx", type=int, default=3, show_default=True)
@click.option("--dh", type=int, default=4, show_default=True)
@click.option("--dp", type=int, default=2, show_default=True)
@click.option("--steps", "T", type=int, default=12, show_default=True, help="Window length.")
@click.option("--corrupt", is_flag=True, help="Damage one gradient entry (harness self-test).")
@click.option("--out", "out_dir", type=str, default=None, help="Write gradcheck.json here.")
@click.pass_context
def gradcheck(ctx, kinds, seed, dx, dh, dp, T, corrupt, out_dir):
    """Finite-difference validation of the analytic gradients."""
    payload = {
        "kinds": list(kinds) or None, "seed": seed, "d_x": dx, "d_h": dh, "d_p": dp,
        "T": T, "corrupt": corrupt, "out_dir": out_dir,
    }
    body = _call(ctx, "/gradcheck", payload)
    if len(body["results"]) == 1:
        only = next(iter(body["results"]))
        click.echo(json.dumps({"kind": only, "max_rel_err": body["results"][only]}))
    else:
        for name, err in body["results"].items():
            click.echo(f"{name}: max_rel_err={err:.3e}")
        click.echo(f"max_rel_err={body['max_rel_err']:.3e} tolerance={body['tolerance']:.0e}")
    sys.exit(0 if body["ok"] else 1)


@main.command()
@click.option("--config", "config_file", type=str, required=True,
              help="Experiment JSON: layers, n_classes, train block, task or manifests.")
@click.option("--out", "out_dir", type=str, default=None,
              help="Write train_log.csv, model.bin, checkpoint.bin here.")
@click.option("--resume", type=str, default=None, help="Checkpoint file to continue from.")
@click.option("--max-epochs", type=int, default=None, help="Override the configured epoch cap.")
@click.option("--seed", type=int, default=None, help="Override the shuffling seed.")
@click.option("--lr", type=float, default=None, help="Override the initial learning rate.")
@click.pass_context
def train(ctx, config_file, out_dir, resume, max_epochs, seed, lr):
    """Train a network on a synthetic task or FSQ1 manifests."""
    config = _load_json(config_file)
    train_block = dict(config.get("train", {}))
    if max_epochs is not None:
        train_block["max_epochs"] = max_epochs
    if seed is not None:
        train_block["seed"] = seed
    if lr is not None:
        train_block["learning_rate_init"] = lr
    config["train"] = train_block
    body = _call(ctx, "/train", {"config": config, "out_dir": out_dir, "resume": resume})
    _echo_json({k: body[k] for k in ("epochs_run", "stopped_early", "final", "files")})


@main.command("eval")
@click.option("--model", "model_path", type=str, required=True, help="model.bin to score.")
@click.option("--data", "manifest_path", type=str, required=True, help="FSQ1 manifest.")
@click.option("--delay", type=int, default=None,
              help="Target delay; default: the value stored with the model.")
@click.option("--delta", is_flag=True, help="Delta-expand features first.")
@click.option("--normalize", is_flag=True, help="Mean/variance-normalize features first.")
@click.pass_context
def eval_cmd(ctx, model_path, manifest_path, delay, delta, normalize):
    """Frame accuracy and mean cross-entropy of a saved model."""
    payload = {
        "model_path": model_path, "manifest_path": manifest_path,
        "target_delay": delay, "delta": delta, "normalize": normalize,
    }
    body = _call(ctx, "/eval", payload)
    _echo_json(body)


@main.command()
@click.option("--kind", "kinds", type=str, multiple=True, required=True,
              help="Cell kind; repeatable, first is the baseline.")
@click.option("--dx", type=int, default=8, show_default=True)
@click.option("--dh", type=int, default=16, show_default=True)
@click.option("--dp", type=int, default=0, show_default=True)
@click.option("--n", type=int, default=None)
@click.option("--m", type=int, default=None)
@click.option("--activation", "activations", type=str, multiple=True,
              help="Activation per --kind (repeat in the same order), or one for all.")
@click.option("--seeds", type=str, default="1,2,3,4,5", show_default=True,
              help="Comma-separated seed list.")
@click.option("--lag-max", "K", type=int, default=19, show_default=True)
@click.option("--probe-len", type=int, default=None, help="Probe length; default lag-max + 21.")
@click.option("--classes", "n_classes", type=int, default=4, show_default=True)
@click.option("--scale", "init_scale", type=float, default=0.05, show_default=True)
@click.option("--out", "out_dir", type=str, default=None,
              help="Write lagcurve.csv and lagcurve_summary.json here.")
@click.pass_context
def lagcurve(ctx, kinds, dx, dh, dp, n, m, activations, seeds, K, probe_len,
             n_classes, init_scale, out_dir):
    """Gradient-norm decay versus lag, compared across architectures."""
    if activations and len(activations) not in (1, len(kinds)):
        click.echo("error: give one --activation or exactly one per --kind", err=True)
        sys.exit(2)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        click.echo(f"error: bad --seeds list {seeds!r}", err=True)
        sys.exit(2)
    configs = []
    for i, kind in enumerate(kinds):
        act = None
        if activations:
            act = activations[0] if len(activations) == 1 else activations[i]
        spec = {"kind": kind, "d_x": dx, "d_h": dh, "d_p": dp}
        if n is not None:
            spec["n"] = n
        if m is not None:
            spec["m"] = m
        if act is not None:
            spec["activation"] = act
        configs.append(spec)
    payload = {
        "configs": configs, "seeds": seed_list, "K": K, "probe_len": probe_len,
        "n_classes": n_classes, "init_scale": init_scale, "out_dir": out_dir,
    }
    body = _call(ctx, "/lagcurve", payload)
    _echo_json(body["summary"])


@main.command("gen-data")
@click.option("--task", type=click.Choice(["delayed_recall", "parity_window", "markov_frames"]),
              required=True)
@click.option("--seq-len", type=int, required=True, help="Frames per utterance.")
@click.option("--count", type=int, required=True, help="Number of utterances.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--lag", type=int, default=0, show_default=True, help="Recall lag L.")
@click.option("--classes", "n_classes", type=int, default=4, show_default=True)
@click.option("--window", type=int, default=0, help="Parity window W.")
@click.option("--states", type=int, default=0, help="Markov state count S.")
@click.option("--dim", "emission_dim", type=int, default=0, help="Markov emission dim D.")
@click.option("--noise", type=float, default=0.1, show_default=True)
@click.option("--segment-size", type=int, default=10, show_default=True)
@click.option("--delta", is_flag=True, help="Delta-expand features.")
@click.option("--normalize", is_flag=True, help="Mean/variance-normalize features.")
@click.option("--delay", type=int, default=0, show_default=True, help="Bake in a target delay.")
@click.option("--out", "out_dir", type=str, required=True, help="Dataset directory.")
@click.pass_context
def gen_data(ctx, task, seq_len, count, seed, lag, n_classes, window, states,
             emission_dim, noise, segment_size, delta, normalize, delay, out_dir):
    """Generate a synthetic FSQ1 dataset plus manifest."""
    task_dict = {
        "kind": task, "seq_len": seq_len, "count": count, "seed": seed, "lag": lag,
        "n_classes": n_classes, "window": window, "states": states,
        "emission_dim": emission_dim, "noise": noise, "segment_size": segment_size,
    }
    payload = {
        "task": task_dict, "out_dir": out_dir, "delta": delta,
        "normalize": normalize, "target_delay": delay,
    }
    body = _call(ctx, "/gen-data", payload)
    _echo_json(body)


@main.command()
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
