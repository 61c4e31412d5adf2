"""Self-describing binary checkpoints.

Layout (little-endian)::

    magic        8 bytes   b"SMPCKPT\\0"
    version      u32
    meta_len     u32, then meta_len bytes of UTF-8 JSON (TrainConfig, counters)
    n_arrays     u32
    per array    u16 name_len, name, u8 ndim, ndim x u32 dims, float32 data
    checksum     32 bytes  SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .trainer import TrainConfig, TrainState

__all__ = ["CheckpointError", "CheckpointVersionError", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"SMPCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or corrupted checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


def _arrays(state: TrainState):
    for store in (state.generator, state.critic):
        for name in store:
            yield f"param/{name}", store[name].value
            yield f"adam_m/{name}", store.m[name]
            yield f"adam_v/{name}", store.v[name]


def encode_checkpoint(state: TrainState) -> bytes:
    meta = {
        "config": state.cfg.to_dict(),
        "iteration": state.iteration,
        "generator_step": state.generator.step,
        "critic_step": state.critic.step,
        "generator_params": list(state.generator),
        "critic_params": list(state.critic),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays = list(_arrays(state))
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path) -> None:
    path = Path(path)
    data = encode_checkpoint(state)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> TrainState:
    if len(data) < len(MAGIC) + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    rd = _Reader(body)
    rd.take(len(MAGIC))
    version, meta_len = rd.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt or truncated")
    meta = json.loads(rd.take(meta_len).decode("utf-8"))
    (count,) = rd.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(rd.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if rd.pos != len(body):
        raise CheckpointError("trailing bytes after array section")

    cfg = TrainConfig.from_dict(meta["config"])
    stores = []
    for key, step_key in (("generator_params", "generator_step"), ("critic_params", "critic_step")):
        store = ParamStore(np.float32)
        for name in meta[key]:
            try:
                store.add(name, arrays[f"param/{name}"])
                store.m[name] = arrays[f"adam_m/{name}"].copy()
                store.v[name] = arrays[f"adam_v/{name}"].copy()
            except KeyError as exc:
                raise CheckpointError(f"missing array {exc}") from None
        store.step = int(meta[step_key])
        stores.append(store)
    return TrainState(cfg, stores[0], stores[1], int(meta["iteration"]))


def load_checkpoint(path) -> TrainState:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(data)
