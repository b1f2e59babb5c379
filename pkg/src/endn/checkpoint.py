"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"ENDN" | u32 version=1 | u32 len + UTF-8 JSON config document
    | tensor table | u8 has_adam | [adam tensor table] | u32 CRC32

A tensor table is ``u32 count`` followed, per tensor, by ``u32 name_len``,
the UTF-8 name, ``u8 ndim``, ``ndim`` x ``u32`` dims and the raw float32
data. The CRC covers every preceding byte.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError, EndnIOError
from .model import ModelConfig, validate_params
from .optim import AdamState

MAGIC = b"ENDN"
VERSION = 1


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)


def _table(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def encode(ckpt: Checkpoint) -> bytes:
    doc = dict(ckpt.meta)
    doc["model"] = ckpt.model_cfg.to_dict()
    if ckpt.adam is not None:
        doc["adam"] = ckpt.adam.hyperparams()
    doc_raw = json.dumps(doc, sort_keys=True).encode("utf-8")
    body = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(doc_raw)), doc_raw, _table(ckpt.params)]
    if ckpt.adam is None:
        body.append(b"\x00")
    else:
        moments = {}
        for name in ckpt.params:
            if name in ckpt.adam.m:
                moments[f"m:{name}"] = ckpt.adam.m[name]
                moments[f"v:{name}"] = ckpt.adam.v[name]
        body += [b"\x01", _table(moments)]
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode(ckpt))
        os.replace(tmp, path)
    except OSError as e:
        raise EndnIOError(f"{path}: cannot write checkpoint ({e})") from e


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf, self.pos, self.end = buf, 0, end

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise CorruptCheckpointError("length", f"file truncated while reading {what} at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def table(self, label: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{label} tensor count")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = self.unpack("<I", f"{label} name length")
            try:
                name = self.take(nlen, f"{label} name").decode("utf-8")
            except UnicodeDecodeError as e:
                raise CorruptCheckpointError("tensor name", str(e)) from e
            (ndim,) = self.unpack("<B", f"{name} ndim")
            dims = self.unpack(f"<{ndim}I", f"{name} dims")
            size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            raw = self.take(4 * size, f"{name} data")
            if name in out:
                raise CorruptCheckpointError("tensor name", f"{name!r} appears twice")
            out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        return out


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CorruptCheckpointError("magic", f"expected {MAGIC!r}, got {bytes(buf[:4])!r}")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise CorruptCheckpointError("version", f"expected {VERSION}, got {version}")
    crc_ok = len(buf) >= 12 and zlib.crc32(buf[:-4]) == struct.unpack("<I", buf[-4:])[0]
    if not crc_ok:
        if _looks_truncated(buf):
            raise CorruptCheckpointError("length", f"{len(buf)} bytes do not hold the recorded structure (truncated, or a size field is damaged)")
        raise CorruptCheckpointError("crc", "checksum mismatch")
    reader = _Reader(buf, len(buf) - 4)
    reader.pos = 8
    (doc_len,) = reader.unpack("<I", "config length")
    doc_raw = reader.take(doc_len, "config document")
    params = reader.table("parameter")
    (has_adam,) = reader.unpack("<B", "adam flag")
    moments = reader.table("adam") if has_adam == 1 else {}
    if has_adam not in (0, 1):
        raise CorruptCheckpointError("adam flag", f"expected 0 or 1, got {has_adam}")
    if reader.pos != reader.end:
        raise CorruptCheckpointError("length", f"{reader.end - reader.pos} unexpected trailing bytes")
    try:
        doc = json.loads(doc_raw.decode("utf-8"))
        model_cfg = ModelConfig.from_dict(doc.pop("model"))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpointError("config document", str(e)) from e
    try:
        validate_params(params, model_cfg)
    except ValueError as e:
        raise CorruptCheckpointError("tensor table", str(e)) from e
    adam = None
    hyper = doc.pop("adam", None)
    if has_adam:
        if hyper is None:
            raise CorruptCheckpointError("config document", "adam table present without hyperparameters")
        adam = AdamState(**hyper)
        for name, arr in moments.items():
            kind, _, pname = name.partition(":")
            if kind not in ("m", "v") or pname not in params:
                raise CorruptCheckpointError("adam table", f"unexpected tensor {name!r}")
            getattr(adam, kind)[pname] = arr.copy()
        if adam.m.keys() != adam.v.keys():
            raise CorruptCheckpointError("adam table", "first/second moment names differ")
    return Checkpoint(model_cfg, {k: v.copy() for k, v in params.items()}, adam, doc)


def _looks_truncated(buf: bytes) -> bool:
    """True when the buffer ends inside its own structure."""
    r = _Reader(buf, len(buf))
    r.pos = 8
    try:
        (doc_len,) = r.unpack("<I", "")
        r.take(doc_len, "")
        r.table("")
        (flag,) = r.unpack("<B", "")
        if flag == 1:
            r.table("")
        r.take(4, "")
    except CorruptCheckpointError:
        return True
    return False


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise EndnIOError(f"{path}: cannot read checkpoint ({e})") from e
    return decode(buf)
