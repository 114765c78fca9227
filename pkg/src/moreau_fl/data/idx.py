"""Reader and writer for the big-endian IDX format used by the MNIST files.

Only unsigned-byte payloads are supported: magic ``0x00000801`` (1-D label
vectors) and ``0x00000803`` (3-D image stacks).
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_SUPPORTED = {0x00000801: 1, 0x00000803: 3}
_MAGIC_BY_NDIM = {v: k for k, v in _SUPPORTED.items()}


class IdxParseError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


@dataclass(frozen=True)
class IdxTensor:
    dims: tuple[int, ...]
    data: np.ndarray  # flat uint8
    dtype: str = "u8"

    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)


def parse_idx(buf: bytes) -> IdxTensor:
    if len(buf) < 8:
        raise IdxParseError("file shorter than the 8-byte minimum header", len(buf))
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in _SUPPORTED:
        raise IdxParseError(f"unsupported magic 0x{magic:08x}", 0)
    ndim = _SUPPORTED[magic]
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise IdxParseError(f"truncated header, expected {ndim} dimensions", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - header_end
    if payload != expected:
        raise IdxParseError(f"payload has {payload} bytes, header declares {expected}", header_end)
    data = np.frombuffer(buf, dtype=np.uint8, offset=header_end).copy()
    return IdxTensor(tuple(int(d) for d in dims), data)


def serialize_idx(tensor: IdxTensor) -> bytes:
    magic = _MAGIC_BY_NDIM.get(len(tensor.dims))
    if magic is None:
        raise ValueError(f"no supported IDX magic for {len(tensor.dims)} dimensions")
    header = struct.pack(f">I{len(tensor.dims)}I", magic, *tensor.dims)
    return header + np.ascontiguousarray(tensor.data, dtype=np.uint8).tobytes()


def read_idx(path) -> IdxTensor:
    """Parse a raw or gzip-compressed IDX file."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


_MNIST_FILES = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = directory / name
        if p.exists():
            return p
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_mnist(directory) -> tuple[np.ndarray, np.ndarray]:
    """All 70k MNIST samples (train then test) as ``(uint8 images (n, 784), labels)``."""
    directory = Path(directory)
    images, labels = [], []
    for img_stem, lab_stem in _MNIST_FILES:
        img = read_idx(_find(directory, img_stem))
        lab = read_idx(_find(directory, lab_stem))
        if len(img.dims) != 3 or len(lab.dims) != 1 or img.dims[0] != lab.dims[0]:
            raise ValueError(f"inconsistent MNIST pair {img_stem} / {lab_stem}")
        images.append(img.data.reshape(img.dims[0], -1))
        labels.append(lab.data.astype(np.int64))
    return np.concatenate(images), np.concatenate(labels)
