import numpy as np
import pytest
import torch

from pfsm_swarm.checkpoint import CheckpointError, load_arrays, load_module, save_arrays, save_module
from pfsm_swarm.featnet import CompoundNet, FeatureConfig


def test_arrays_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "f64": rng.standard_normal((3, 4)),
        "f32": rng.standard_normal(5).astype(np.float32),
        "i64": np.arange(7),
        "bool": np.array([True, False, True]),
        "scalar": np.array(3.5),
        "special": np.array([np.nan, np.inf, -0.0, 5e-324]),
    }
    path = tmp_path / "a.ckpt"
    save_arrays(path, arrays, {"note": "x"})
    back, meta = load_arrays(path)
    assert meta == {"note": "x"}
    for k, a in arrays.items():
        assert back[k].dtype == a.dtype and back[k].shape == a.shape
        assert back[k].tobytes() == a.tobytes()


def test_module_round_trip(tmp_path):
    torch.manual_seed(0)
    cfg = FeatureConfig(embed_width=8, stream_width=8, hidden=16, conv_channels=4)
    a, b = CompoundNet(cfg), CompoundNet(cfg)
    save_module(tmp_path / "m.ckpt", a, {"policy": "PFSM-DRL"})
    assert load_module(tmp_path / "m.ckpt", b) == {"policy": "PFSM-DRL"}
    for (n, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(p, q), n


def test_bad_files_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_arrays(p)
    save_arrays(p, {"x": np.arange(10.0)})
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_arrays(p)
    p.write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError):
        load_arrays(p)
