import hashlib
import struct

import numpy as np
import pytest

from smartpaste.checkpoint import (
    MAGIC,
    CheckpointError,
    CheckpointVersionError,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from smartpaste.sample_forge import load_corpus
from smartpaste.trainer import TrainConfig, init_state, train_step

TINY = TrainConfig(resolution=32, base_channels=4, dilations=(1, 2, 2, 1, 1, 1, 1),
                   critic_channels=(4, 4, 4, 4), critic_local_channels=(4, 4, 4), batch_size=2)


@pytest.fixture(scope="module")
def stepped_state(tmp_path_factory):
    from conftest import smooth_image
    from smartpaste.tensor_core import write_image

    d = tmp_path_factory.mktemp("ckpt-corpus")
    write_image(d / "a.png", smooth_image(48, 48))
    state = init_state(TINY)
    train_step(state, load_corpus(d))
    return state


def assert_same_state(a, b):
    assert a.cfg == b.cfg and a.iteration == b.iteration
    for sa, sb in ((a.generator, b.generator), (a.critic, b.critic)):
        assert list(sa) == list(sb) and sa.step == sb.step
        for name in sa:
            assert np.array_equal(sa[name].value, sb[name].value)
            assert np.array_equal(sa.m[name], sb.m[name]) and np.array_equal(sa.v[name], sb.v[name])


def test_roundtrip_restores_everything(stepped_state, tmp_path):
    path = tmp_path / "s.ckpt"
    save_checkpoint(stepped_state, path)
    back = load_checkpoint(path)
    assert_same_state(stepped_state, back)
    assert back.generator.dtype == np.float32


def test_save_load_save_is_byte_identical(stepped_state, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(stepped_state, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_header_layout(stepped_state):
    data = encode_checkpoint(stepped_state)
    assert data[:8] == MAGIC
    version, meta_len = struct.unpack("<II", data[8:16])
    assert version == 1
    assert b'"config"' in data[16:16 + meta_len]
    assert hashlib.sha256(data[:-32]).digest() == data[-32:]


@pytest.mark.parametrize("cut", [1, 32, 100])
def test_truncated_file_is_corrupt(stepped_state, tmp_path, cut):
    path = tmp_path / "t.ckpt"
    path.write_bytes(encode_checkpoint(stepped_state)[:-cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_flipped_byte_fails_checksum(stepped_state, tmp_path):
    data = bytearray(encode_checkpoint(stepped_state))
    data[len(data) // 2] ^= 0x01
    path = tmp_path / "c.ckpt"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_bad_magic_and_version(stepped_state, tmp_path):
    data = encode_checkpoint(stepped_state)
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"PNG\x00\x00\x00\x00\x00" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(data[:8] + struct.pack("<I", 99) + data[12:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_failed_save_leaves_previous_file_intact(stepped_state, tmp_path, monkeypatch):
    path = tmp_path / "keep.ckpt"
    save_checkpoint(stepped_state, path)
    before = path.read_bytes()

    import smartpaste.checkpoint as ck

    def boom(*a):
        raise OSError("disk full")
    monkeypatch.setattr(ck.os, "replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(stepped_state, path)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["keep.ckpt"]
