"""Checkpoint byte format: round trips, validation, corruption handling."""

import struct

import numpy as np
import pytest

from awgunet.checkpoint import (FORMAT_VERSION, MAGIC, load_checkpoint,
                                save_checkpoint)
from awgunet.exceptions import CheckpointError
from awgunet.model import ModelConfig, build_model


@pytest.fixture()
def small_model():
    cfg = ModelConfig.desk_profile(variant="ii", seed=4)
    store, graph = build_model(cfg)
    return cfg, store, graph


def test_roundtrip_bit_identical(small_model, tmp_path):
    cfg, store, _ = small_model
    path = tmp_path / "m.awgu"
    save_checkpoint(path, cfg, store, step=12, include_optimizer=True)
    loaded = load_checkpoint(path)
    assert loaded.config == cfg
    assert loaded.step == 12
    assert loaded.store.names() == store.names()
    for name in store.names():
        assert loaded.store[name].data.tobytes() == store[name].data.tobytes()
    # Saving the loaded state reproduces the file byte-for-byte.
    path2 = tmp_path / "m2.awgu"
    save_checkpoint(path2, loaded.config, loaded.store, step=12,
                    include_optimizer=True)
    assert path.read_bytes() == path2.read_bytes()


def test_optimizer_state_roundtrip(small_model, tmp_path):
    cfg, store, _ = small_model
    first = store.names()[0]
    store.entry(first).m[:] = 0.25
    store.entry(first).v[:] = 0.5
    path = tmp_path / "opt.awgu"
    save_checkpoint(path, cfg, store, step=99, include_optimizer=True)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.store.entry(first).m,
                                  store.entry(first).m)
    np.testing.assert_array_equal(loaded.store.entry(first).v,
                                  store.entry(first).v)


def test_without_optimizer_state(small_model, tmp_path):
    cfg, store, _ = small_model
    path = tmp_path / "plain.awgu"
    save_checkpoint(path, cfg, store)
    loaded = load_checkpoint(path)
    assert loaded.step is None


def test_magic_bytes_lead_the_file(small_model, tmp_path):
    cfg, store, _ = small_model
    path = tmp_path / "m.awgu"
    save_checkpoint(path, cfg, store)
    blob = path.read_bytes()
    assert blob[:4] == b"AWGU" == MAGIC
    assert struct.unpack("<I", blob[4:8])[0] == FORMAT_VERSION


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.awgu"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncation_rejected(small_model, tmp_path):
    cfg, store, _ = small_model
    path = tmp_path / "m.awgu"
    save_checkpoint(path, cfg, store)
    (tmp_path / "cut.awgu").write_bytes(path.read_bytes()[:200])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "cut.awgu")


def test_unsupported_version_rejected(small_model, tmp_path):
    cfg, store, _ = small_model
    path = tmp_path / "m.awgu"
    save_checkpoint(path, cfg, store)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 9)
    (tmp_path / "v9.awgu").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v9.awgu")


def test_name_set_mismatch_rejected(small_model, tmp_path):
    # A variant-iii config expects the gain vectors; a variant-ii store
    # lacks them, so the embedded config and tensor list disagree.
    cfg, store, _ = small_model
    cfg_iii = ModelConfig.desk_profile(variant="iii", seed=4)
    path = tmp_path / "mismatch.awgu"
    save_checkpoint(path, cfg_iii, store)
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(path)


def test_loaded_model_reproduces_forward(small_model, tmp_path):
    cfg, store, graph = small_model
    x_data = np.random.default_rng(0).uniform(0, 1, (1, 3, 64, 64)).astype(
        np.float32)
    from awgunet.autodiff import Tensor
    before = graph.forward(store, Tensor(x_data)).data
    path = tmp_path / "m.awgu"
    save_checkpoint(path, cfg, store)
    loaded = load_checkpoint(path)
    after = loaded.graph.forward(loaded.store, Tensor(x_data)).data
    np.testing.assert_array_equal(before, after)
