"""Binary checkpoint files: named float32 tensors plus a metadata block.

Layout (all integers little-endian):

    magic "MIARNCKP" | version u32 | meta_len u32 | meta (UTF-8 key=value lines)
    payload := tensor_count u32, then per tensor:
        name_len u16 | name UTF-8 | rank u8 | dims u32 x rank | values f32 LE
    crc32(payload) u32

The CRC covers the whole payload region, so a single flipped tensor byte is
detected at load time.  Writes go to a temp file first and are renamed into
place.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

MAGIC = b"MIARNCKP"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint (bad magic/version/CRC/layout)."""


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key, value in meta.items():
        key = str(key)
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata key/value not encodable: {key!r}={value!r}")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def _decode_meta(blob: bytes) -> dict:
    meta = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def save_checkpoint(path, named_arrays, meta: dict) -> None:
    """Write named float32 tensors and metadata; bit-exact on round trip."""
    payload = bytearray()
    named_arrays = list(named_arrays)
    payload += struct.pack("<I", len(named_arrays))
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            payload += struct.pack("<I", dim)
        payload += arr.tobytes()

    meta_blob = _encode_meta(meta)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(meta_blob))
    blob += meta_blob
    blob += payload
    blob += struct.pack("<I", zlib.crc32(bytes(payload)))

    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt):
        (value,) = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return value


def load_checkpoint(path):
    """Read back (ordered {name: float32 array}, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = _decode_meta(r.take(r.unpack("<I")))

    payload_start = r.pos
    count = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        name = r.take(r.unpack("<H")).decode("utf-8")
        rank = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        arrays[name] = data.copy()
    payload_end = r.pos

    stored_crc = r.unpack("<I")
    actual_crc = zlib.crc32(blob[payload_start:payload_end])
    if stored_crc != actual_crc:
        raise CheckpointError(f"{path}: payload checksum failure")
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after checksum")
    return arrays, meta


def save_model_checkpoint(path, model, extra_meta=None) -> None:
    """Persist a model's tensors with self-describing metadata."""
    meta = {
        "model": model.kind,
        "n": model.emb_dim,
        "d": getattr(model, "hidden_dim", 0),
        "k": getattr(model, "k", 0),
        "vocab_size": model.vocab_size,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.state_arrays(), meta)


def load_model_checkpoint(path):
    """Rebuild a model from a checkpoint file; returns (model, meta)."""
    from . import model as model_mod
    from .numerics import substream

    arrays, meta = load_checkpoint(path)
    try:
        kind = meta["model"]
        n = int(meta["n"])
        d = int(meta["d"])
        k = int(meta.get("k", "0")) or None
        vocab_size = int(meta["vocab_size"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete metadata ({exc})") from None
    net = model_mod.build_model(
        kind, vocab_size, n, max(d, 1), substream(0, "checkpoint-load"), k=k
    )
    net.load_state(arrays)
    return net, meta
