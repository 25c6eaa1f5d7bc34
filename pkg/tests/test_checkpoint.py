import numpy as np
import pytest

from chanmae.checkpoint import load_checkpoint, load_into_params, save_checkpoint
from chanmae.errors import CheckpointFormatError
from chanmae.network import ModelConfig, init_model_params


def toy_model():
    cfg = ModelConfig(
        a=4, k=8, patch_rows=2, patch_cols=4, embed_dim=8, encoder_depth=1,
        encoder_heads=2, decoder_dim=8, decoder_depth=1, decoder_heads=2, mlp_ratio=2.0,
    )
    return cfg, init_model_params(cfg, np.random.default_rng(0))


def test_round_trip_bit_exact(tmp_path):
    cfg, model = toy_model()
    path = tmp_path / "m.csim"
    save_checkpoint(path, cfg, model.params, meta={"kind": "pretrain", "seed": 3})
    cfg2, arrays, meta = load_checkpoint(path)
    assert cfg2 == cfg
    assert meta == {"kind": "pretrain", "seed": 3}
    assert list(arrays) == model.names()
    for name in model.names():
        assert arrays[name].tobytes() == model[name].data.tobytes()


def test_save_is_byte_stable(tmp_path):
    cfg, model = toy_model()
    p1, p2 = tmp_path / "a.csim", tmp_path / "b.csim"
    save_checkpoint(p1, cfg, model.params, meta={"x": 1})
    save_checkpoint(p2, cfg, model.params, meta={"x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_load_into_params(tmp_path):
    cfg, model = toy_model()
    path = tmp_path / "m.csim"
    save_checkpoint(path, cfg, model.params)
    _, arrays, _ = load_checkpoint(path)
    fresh = init_model_params(cfg, np.random.default_rng(99))
    assert fresh.checksum() != model.checksum()
    load_into_params(fresh.params, arrays)
    assert fresh.checksum() == model.checksum()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.csim"
    path.write_bytes(b"WHAT" + b"\x00" * 32)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_truncation(tmp_path):
    cfg, model = toy_model()
    path = tmp_path / "m.csim"
    save_checkpoint(path, cfg, model.params)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_trailing_bytes(tmp_path):
    cfg, model = toy_model()
    path = tmp_path / "m.csim"
    save_checkpoint(path, cfg, model.params)
    path.write_bytes(path.read_bytes() + b"!!")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_missing_tensor_detected(tmp_path):
    cfg, model = toy_model()
    path = tmp_path / "m.csim"
    partial = dict(list(model.params.items())[:-1])
    save_checkpoint(path, cfg, partial)
    _, arrays, _ = load_checkpoint(path)
    fresh = init_model_params(cfg, np.random.default_rng(1))
    with pytest.raises(CheckpointFormatError):
        load_into_params(fresh.params, arrays)
