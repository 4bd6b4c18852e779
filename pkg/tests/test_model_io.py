import numpy as np
import pytest

from hornn_lab.cells import CellConfig
from hornn_lab.engine import Schedule, TrainConfig, newbob_step
from hornn_lab.errors import ConfigError
from hornn_lab.math_core import seeded_rng
from hornn_lab.model_io import load_checkpoint, load_model, save_checkpoint, save_model
from hornn_lab.network import NetworkConfig, init_network


def two_layer_net(seed=3):
    cfg = NetworkConfig(
        layers=[
            CellConfig(kind="hornnp_sigmoid", d_x=5, d_h=7, d_p=3),
            CellConfig(kind="lstm", d_x=3, d_h=4),
        ],
        n_classes=6,
    )
    return init_network(cfg, seed=seed, scale=0.4)


def test_model_round_trip_is_bitwise(tmp_path):
    net = two_layer_net()
    p = tmp_path / "model.bin"
    save_model(net, p)
    back, extra = load_model(p)
    assert extra == {}
    assert back.config.to_dict() == net.config.to_dict()
    flat_a = net.flat_tensors()
    flat_b = back.flat_tensors()
    assert list(flat_a) == list(flat_b)
    for path in flat_a:
        assert np.array_equal(flat_a[path], flat_b[path])


def test_extra_payload_survives(tmp_path):
    net = two_layer_net()
    p = tmp_path / "model.bin"
    save_model(net, p, extra={"note": "smoke", "values": [1, 2, 3]})
    _, extra = load_model(p)
    assert extra == {"note": "smoke", "values": [1, 2, 3]}


def test_load_model_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_model(tmp_path / "absent.bin")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ConfigError):
        load_model(bad)


def test_saved_file_is_deterministic(tmp_path):
    net = two_layer_net(seed=9)
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    save_model(net, a)
    save_model(net, b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_round_trip(tmp_path):
    net = two_layer_net()
    sched = Schedule.fresh(0.5, ramp=0.005, stop=0.001)
    newbob_step(sched, 10.0)
    newbob_step(sched, 9.99)  # latches halving
    cfg = TrainConfig(unfold_steps=8, minibatch_frames=256)
    rng = seeded_rng(4)
    rng.standard_normal(17)  # advance so the restored state is nontrivial
    rows = [{"epoch": 1, "lr": 0.5, "train_ce": 1.0, "train_facc": 0.3,
             "valid_ce": 1.1, "valid_facc": 0.28}]
    p = tmp_path / "ck.bin"
    save_checkpoint(net, p, sched, cfg, epoch=2, rng=rng, log_rows=rows)

    params, sched2, cfg2, epoch, rng2 = load_checkpoint(p)
    assert epoch == 2
    assert cfg2 == cfg
    assert sched2.to_dict() == sched.to_dict()
    assert sched2.halving
    # the restored generator continues the exact stream
    assert np.array_equal(rng2.standard_normal(5), rng.standard_normal(5))
    for path, v in net.flat_tensors().items():
        assert np.array_equal(params.flat_tensors()[path], v)


def test_plain_model_is_not_a_checkpoint(tmp_path):
    net = two_layer_net()
    p = tmp_path / "model.bin"
    save_model(net, p)
    with pytest.raises(ConfigError):
        load_checkpoint(p)
