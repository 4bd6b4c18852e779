import json

import pytest
from fastapi.testclient import TestClient

from hornn_lab.service.app import app

client = TestClient(app, raise_server_exceptions=False)

TINY_TASK = {
    "kind": "delayed_recall", "seq_len": 12, "count": 12, "seed": 3,
    "lag": 1, "n_classes": 4,
}

TINY_EXPERIMENT = {
    "layers": [{"kind": "rnn", "d_x": 4, "d_h": 5}],
    "n_classes": 4,
    "task": TINY_TASK,
    "valid_fraction": 0.25,
    "train": {
        "unfold_steps": 4, "max_epochs": 2, "minibatch_frames": 64,
        "target_delay": 0, "learning_rate_init": 0.1,
    },
}


def test_health():
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


# ---------------------------------------------------------------------------
# /count
# ---------------------------------------------------------------------------

def test_count_single_layer():
    r = client.post("/count", json={"layers": [{"kind": "rnn", "d_x": 80, "d_h": 500}]})
    assert r.status_code == 200
    body = r.json()
    assert body["report"]["params_recurrent"] == 290_500
    assert body["report"]["madds_per_frame"] == 290_000
    assert len(body["report"]["per_layer"]) == 1
    assert body["files"] == []


def test_count_writes_outputs(tmp_path):
    r = client.post("/count", json={
        "layers": [{"kind": "hornnp_sigmoid", "d_x": 80, "d_h": 500, "d_p": 250}],
        "out_dir": str(tmp_path), "csv": True,
    })
    assert r.status_code == 200
    body = r.json()
    assert body["report"]["params_recurrent"] == 415_500
    assert sorted(p.rsplit("/", 1)[-1] for p in body["files"]) == ["cost.csv", "cost.json"]
    on_disk = json.loads((tmp_path / "cost.json").read_text())
    assert on_disk == body["report"]
    assert (tmp_path / "cost.csv").read_text().startswith("kind,")


def test_count_rejects_bad_configs():
    r = client.post("/count", json={"layers": [{"kind": "gru", "d_x": 4, "d_h": 4}]})
    assert r.status_code == 422
    r = client.post("/count", json={"layers": [{"kind": "hornn_relu", "d_x": 4, "d_h": 4, "n": 1}]})
    assert r.status_code == 422
    r = client.post("/count", json={"layers": []})
    assert r.status_code == 422
    r = client.post("/count", json={"layers": [{"kind": "rnn", "d_x": 4, "d_h": 4}], "mystery": 1})
    assert r.status_code == 422


# ---------------------------------------------------------------------------
# /gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_single_kind():
    r = client.post("/gradcheck", json={"kinds": ["rnn"], "T": 8})
    assert r.status_code == 200
    body = r.json()
    assert set(body["results"]) == {"rnn"}
    assert body["ok"] is True
    assert body["max_rel_err"] < body["tolerance"] == 1e-6
    assert body["dims"] == {"d_x": 3, "d_h": 4, "d_p": 2, "T": 8}


def test_gradcheck_corrupt_fails():
    r = client.post("/gradcheck", json={"kinds": ["rnn"], "T": 8, "corrupt": True})
    assert r.status_code == 200
    body = r.json()
    assert body["ok"] is False
    assert body["max_rel_err"] > 1e-2


def test_gradcheck_rejects_large_instances():
    r = client.post("/gradcheck", json={"kinds": ["rnn"], "d_h": 64})
    assert r.status_code == 422


def test_gradcheck_writes_json(tmp_path):
    r = client.post("/gradcheck", json={"kinds": ["rnn"], "T": 8, "out_dir": str(tmp_path)})
    assert r.status_code == 200
    saved = json.loads((tmp_path / "gradcheck.json").read_text())
    assert saved["ok"] is True


# ---------------------------------------------------------------------------
# /train and /eval
# ---------------------------------------------------------------------------

def test_train_runs_and_writes(tmp_path):
    r = client.post("/train", json={"config": TINY_EXPERIMENT, "out_dir": str(tmp_path)})
    assert r.status_code == 200
    body = r.json()
    assert body["epochs_run"] == 2
    assert len(body["log_rows"]) == 2
    assert set(body["final"]) == {"epoch", "lr", "train_ce", "train_facc", "valid_ce", "valid_facc"}
    for name in ("train_log.csv", "model.bin", "checkpoint.bin"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "train_log.csv").read_text().splitlines()[0]
    assert header == "epoch,lr,train_ce,train_facc,valid_ce,valid_facc"


def test_train_rejects_unknown_keys():
    bad = dict(TINY_EXPERIMENT)
    bad["surprise"] = 1
    r = client.post("/train", json={"config": bad})
    assert r.status_code == 422


def test_train_rejects_window_shorter_than_lag():
    bad = json.loads(json.dumps(TINY_EXPERIMENT))
    bad["layers"] = [{"kind": "hornn_relu", "d_x": 4, "d_h": 5, "n": 6}]
    bad["train"]["unfold_steps"] = 4
    r = client.post("/train", json={"config": bad})
    assert r.status_code == 422


def test_eval_round_trip(tmp_path):
    train_dir = tmp_path / "run"
    r = client.post("/train", json={"config": TINY_EXPERIMENT, "out_dir": str(train_dir)})
    assert r.status_code == 200

    data_dir = tmp_path / "data"
    task = dict(TINY_TASK, count=6, seed=9)
    r = client.post("/gen-data", json={"task": task, "out_dir": str(data_dir)})
    assert r.status_code == 200
    manifest = r.json()["manifest"]

    r = client.post("/eval", json={
        "model_path": str(train_dir / "model.bin"), "manifest_path": manifest,
    })
    assert r.status_code == 200
    body = r.json()
    assert 0.0 <= body["frame_acc"] <= 1.0
    assert body["mean_ce"] > 0.0
    assert body["frames"] == 6 * 12
    assert body["target_delay"] == 0
    assert body["unfold_steps"] == 4


def test_eval_missing_model_is_client_error(tmp_path):
    r = client.post("/eval", json={
        "model_path": str(tmp_path / "nope.bin"), "manifest_path": str(tmp_path / "nope.txt"),
    })
    assert r.status_code == 422


# ---------------------------------------------------------------------------
# /lagcurve and /gen-data
# ---------------------------------------------------------------------------

def test_lagcurve_summary_and_csv(tmp_path):
    r = client.post("/lagcurve", json={
        "configs": [
            {"kind": "rnn", "d_x": 3, "d_h": 6},
            {"kind": "hornn_sigmoid", "d_x": 3, "d_h": 6},
        ],
        "seeds": [1, 2, 3], "K": 5, "probe_len": 16, "out_dir": str(tmp_path),
    })
    assert r.status_code == 200
    body = r.json()
    assert body["labels"] == ["0:rnn:sigmoid", "1:hornn_sigmoid:sigmoid"]
    assert set(body["summary"]["medians"]) == set(body["labels"])
    assert body["summary"]["baseline"] == "0:rnn:sigmoid"
    lines = (tmp_path / "lagcurve.csv").read_text().splitlines()
    assert lines[0] == "kind,seed,k,g_k"
    assert len(lines) == 1 + 2 * 3 * 6
    assert (tmp_path / "lagcurve_summary.json").exists()


def test_lagcurve_needs_three_seeds():
    r = client.post("/lagcurve", json={
        "configs": [{"kind": "rnn", "d_x": 3, "d_h": 6}], "seeds": [1], "K": 5,
    })
    assert r.status_code == 422


def test_gen_data_writes_dataset(tmp_path):
    r = client.post("/gen-data", json={
        "task": {"kind": "parity_window", "seq_len": 20, "count": 5, "seed": 2, "window": 3},
        "out_dir": str(tmp_path), "delta": True,
    })
    assert r.status_code == 200
    body = r.json()
    assert body["utterances"] == 5
    assert body["frames"] == 100
    assert body["dim"] == 2  # bit plus its delta
    assert body["n_classes"] == 2
    manifest = tmp_path / "manifest.txt"
    assert str(manifest) == body["manifest"]
    assert len(manifest.read_text().splitlines()) == 5


def test_gen_data_rejects_bad_task(tmp_path):
    r = client.post("/gen-data", json={
        "task": {"kind": "bogus", "seq_len": 5, "count": 1, "seed": 1},
        "out_dir": str(tmp_path),
    })
    assert r.status_code == 422
