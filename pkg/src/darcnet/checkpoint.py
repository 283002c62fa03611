"""Binary checkpoint container for :class:`~darcnet.model.ModelParams`.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"DARCCKPT"
    8       4     format version (uint32, currently 1)
    12      4     header length N (uint32)
    16      N     header: UTF-8 JSON object
    16+N    P     payload: raw C-order tensor buffers, back to back
    16+N+P  32    SHA-256 digest of every preceding byte

The header holds ``config`` (ArchConfig fields), ``seed``, ``dtype``
(``"float32"`` or ``"float64"``, stored little-endian), ``meta`` (free-form)
and ``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}`` where
``offset`` is relative to the start of the payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .model import ArchConfig, ModelParams, param_shapes
from .tensor import Tensor

MAGIC = b"DARCCKPT"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    """The file is truncated or its checksum does not match."""


class ConfigMismatchError(CheckpointError):
    """The stored architecture differs from the one the caller expects."""


def to_bytes(params: ModelParams, meta: dict | None = None) -> bytes:
    dtype = np.dtype(params.dtype).newbyteorder("<")
    entries, chunks, offset = [], [], 0
    for name, t in params.named():
        buf = np.ascontiguousarray(t.data, dtype=dtype).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps({
        "config": params.config.to_dict(),
        "seed": int(params.seed),
        "dtype": np.dtype(params.dtype).name,
        "meta": meta or {},
        "tensors": entries,
    }, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def from_bytes(blob: bytes, expected: ArchConfig | None = None) -> tuple[ModelParams, dict]:
    if len(blob) < len(MAGIC) + 8 + _DIGEST or blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic or truncated)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + hlen].decode())
    payload = body[start + hlen:]
    config = ArchConfig.from_dict(header["config"])
    if expected is not None and expected != config:
        raise ConfigMismatchError(f"checkpoint holds {config}, expected {expected}")
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    shapes = param_shapes(config)
    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        data = np.frombuffer(raw, dtype=dtype).reshape(e["shape"]).astype(dtype.newbyteorder("="))
        tensors[e["name"]] = Tensor(data, requires_grad=True, name=e["name"])
    if {n: tuple(t.shape) for n, t in tensors.items()} != shapes:
        raise CheckpointError("checkpoint tensors do not match the stored architecture")
    tensors = {n: tensors[n] for n in shapes}
    return ModelParams(config, header["seed"], tensors), header.get("meta", {})


def checkpoint_save(params: ModelParams, path: str | os.PathLike, meta: dict | None = None) -> str:
    """Write ``params`` to ``path``; returns the SHA-256 hex digest of the file."""
    blob = to_bytes(params, meta)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def checkpoint_load(path: str | os.PathLike, expected: ArchConfig | None = None) -> ModelParams:
    with open(path, "rb") as fh:
        params, _ = from_bytes(fh.read(), expected)
    return params


def checkpoint_meta(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())[1]
