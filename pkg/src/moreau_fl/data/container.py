"""Versioned binary container for :class:`FederatedDataset`.

Layout (all integers little-endian)::

    b"MFLDS" version:u8
    header_len:u32  header: UTF-8 JSON, sorted keys, compact separators
    per client:
        n_arrays:u32
        per array: name_len:u16 name  enc:u8  ndim:u8  dims:u64*ndim  payload

Encodings: 0 = float64, 1 = int64, 2 = uint8 holding ``value * 255`` (used
when a float array is exactly representable that way, e.g. MNIST pixels).
The bytes depend only on the dataset contents, so their SHA-256 doubles as a
content hash.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .dataset import ClientDataset, FederatedDataset

MAGIC = b"MFLDS"
VERSION = 1
_CORE = ("train_x", "train_y", "test_x", "test_y")
_F8, _I8, _U8S = 0, 1, 2


class ContainerError(ValueError):
    pass


def _encode(arr: np.ndarray) -> tuple[int, bytes]:
    if np.issubdtype(arr.dtype, np.integer):
        return _I8, np.ascontiguousarray(arr, dtype="<i8").tobytes()
    arr = np.asarray(arr, dtype=np.float64)
    scaled = arr * 255.0
    as_u8 = np.rint(scaled)
    if arr.size and np.all((as_u8 >= 0) & (as_u8 <= 255)) and np.array_equal(as_u8 / 255.0, arr):
        return _U8S, as_u8.astype(np.uint8).tobytes()
    return _F8, np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _decode(enc: int, dims: tuple[int, ...], buf: bytes) -> np.ndarray:
    if enc == _F8:
        return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(dims)
    if enc == _I8:
        return np.frombuffer(buf, dtype="<i8").astype(np.int64).reshape(dims)
    if enc == _U8S:
        return np.frombuffer(buf, dtype=np.uint8).astype(np.float64).reshape(dims) / 255.0
    raise ContainerError(f"unknown array encoding {enc}")


_ITEMSIZE = {_F8: 8, _I8: 8, _U8S: 1}


def header_of(ds: FederatedDataset) -> dict:
    return {"version": VERSION, "N": ds.N, "d": ds.d, "C": ds.C, **ds.meta}


def dumps(ds: FederatedDataset) -> bytes:
    out = io.BytesIO()
    header = json.dumps(header_of(ds), sort_keys=True, separators=(",", ":")).encode()
    out.write(MAGIC + bytes([VERSION]))
    out.write(struct.pack("<I", len(header)))
    out.write(header)
    for client in ds.clients:
        arrays = [(name, getattr(client, name)) for name in _CORE]
        arrays += sorted(client.extras.items())
        out.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            arr = np.asarray(arr)
            enc, payload = _encode(arr)
            raw_name = name.encode()
            out.write(struct.pack("<H", len(raw_name)) + raw_name)
            out.write(struct.pack("<BB", enc, arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(payload)
    return out.getvalue()


def loads(buf: bytes) -> FederatedDataset:
    if buf[:5] != MAGIC:
        raise ContainerError("not a dataset container (bad magic)")
    if buf[5] != VERSION:
        raise ContainerError(f"unsupported container version {buf[5]}")
    pos = 6
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    clients = []
    for _ in range(header["N"]):
        (n_arrays,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = {}
        for _ in range(n_arrays):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            enc, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            nbytes = int(np.prod(dims, dtype=np.int64)) * _ITEMSIZE.get(enc, 0)
            if pos + nbytes > len(buf):
                raise ContainerError(f"truncated array {name!r} at offset {pos}")
            arrays[name] = _decode(enc, tuple(dims), buf[pos:pos + nbytes])
            pos += nbytes
        core = [arrays.pop(name) for name in _CORE]
        clients.append(ClientDataset(*core, extras=arrays))
    meta = {k: v for k, v in header.items() if k not in ("version", "N", "d", "C")}
    return FederatedDataset(clients, d=header["d"], C=header["C"], meta=meta)


def write_dataset(ds: FederatedDataset, path) -> str:
    """Write ``ds`` to ``path`` and return its content hash."""
    buf = dumps(ds)
    Path(path).write_bytes(buf)
    return hashlib.sha256(buf).hexdigest()


def read_dataset(path) -> FederatedDataset:
    return loads(Path(path).read_bytes())


def dataset_hash(ds: FederatedDataset) -> str:
    return hashlib.sha256(dumps(ds)).hexdigest()
