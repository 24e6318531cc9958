import numpy as np
import pytest

from pdd.checkpoint import checkpoint_from_training, dumps, header_of, load_checkpoint, loads, save_checkpoint
from pdd.data import Manifest, generate
from pdd.errors import CorruptionError, FormatError
from pdd.pipeline import train

from conftest import tiny_config


@pytest.fixture(scope="module")
def trained():
    cfg = tiny_config(train={"epochs": 1})
    tr, te = generate(cfg.data)
    return train(cfg, Manifest(tr, te))


def test_save_load_save_byte_equal(trained, tmp_path):
    ck = checkpoint_from_training(trained)
    a = save_checkpoint(ck, tmp_path / "a.pdd")
    b = save_checkpoint(load_checkpoint(tmp_path / "a.pdd"), tmp_path / "b.pdd")
    assert a == b
    assert (tmp_path / "a.pdd").read_bytes() == (tmp_path / "b.pdd").read_bytes()


def test_restore_is_exact(trained):
    ck = loads(dumps(checkpoint_from_training(trained)))
    model = ck.to_model()
    live = trained.model.named_parameters()
    for name, p in model.named_parameters().items():
        assert p.data.tobytes() == live[name].data.astype(np.float32).tobytes(), name
    for name, b in trained.model.named_buffers().items():
        np.testing.assert_array_equal(model.named_buffers()[name], b)
    assert ck.step == trained.step and ck.epoch == 1
    assert set(ck.arrays("adam_m")) == set(trained.adam.m)


def test_flipped_byte_detected(trained):
    data = bytearray(dumps(checkpoint_from_training(trained)))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(CorruptionError):
        loads(bytes(data))


def test_bad_magic(trained):
    data = dumps(checkpoint_from_training(trained))
    with pytest.raises(FormatError):
        loads(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        loads(b"PDD1")


def test_header_readable(trained, tmp_path):
    save_checkpoint(checkpoint_from_training(trained), tmp_path / "a.pdd")
    h = header_of(tmp_path / "a.pdd")
    assert h["epoch"] == 1 and len(h["config_digest"]) == 16
    assert h["manifest_digest"] == trained.manifest_digest
