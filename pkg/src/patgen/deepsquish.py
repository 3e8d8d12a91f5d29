"""Folding a square topology matrix into a multi-channel topology tensor.

Each ``s x s`` patch (``s = sqrt(C)``) becomes one spatial site with ``C``
channels; channel ``c = (r % s) * s + (col % s)``.  Every bit keeps its own
channel, so no bit is weighted above another.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"DSQT"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class TensorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TopologyTensor:
    data: np.ndarray  # (C, M, M) uint8, channel-major

    def __post_init__(self):
        data = np.array(self.data, dtype=np.uint8, copy=True)
        if data.ndim != 3 or data.shape[1] != data.shape[2]:
            raise TensorError(f"expected a (C, M, M) array, got shape {data.shape}")
        if _isqrt(data.shape[0]) is None:
            raise TensorError(f"channel count {data.shape[0]} is not a perfect square")
        if np.any(data > 1):
            raise TensorError("tensor entries must be 0 or 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> int:
        return self.data.shape[1]

    @property
    def side(self) -> int:
        """Side length of the topology matrix this tensor folds."""
        return _isqrt(self.channels) * self.size

    def __eq__(self, other):
        if not isinstance(other, TopologyTensor):
            return NotImplemented
        return np.array_equal(self.data, other.data)


def _isqrt(c: int) -> int | None:
    s = math.isqrt(c) if c > 0 else 0
    return s if s > 0 and s * s == c else None


def fold(matrix, channels: int) -> TopologyTensor:
    mat = np.asarray(matrix)
    s = _isqrt(channels)
    if s is None:
        raise TensorError(f"channel count {channels} is not a perfect square")
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise TensorError(f"topology matrix must be square, got shape {mat.shape}")
    if mat.shape[0] % s:
        raise TensorError(f"side {mat.shape[0]} is not divisible by {s}")
    if not np.all((mat == 0) | (mat == 1)):
        raise TensorError("topology matrix must be binary")
    m = mat.shape[0] // s
    data = mat.astype(np.uint8).reshape(m, s, m, s).transpose(1, 3, 0, 2).reshape(channels, m, m)
    return TopologyTensor(data)


def unfold(tensor: TopologyTensor) -> np.ndarray:
    c, m = tensor.channels, tensor.size
    s = _isqrt(c)
    return tensor.data.reshape(s, s, m, m).transpose(2, 0, 3, 1).reshape(s * m, s * m).copy()


def to_bytes(tensor: TopologyTensor) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, tensor.channels, tensor.size) + tensor.data.tobytes(order="C")


def from_bytes(blob: bytes) -> TopologyTensor:
    if len(blob) < _HEADER.size:
        raise TensorError("truncated tensor file")
    magic, version, c, m = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise TensorError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorError(f"unsupported tensor file version {version}")
    body = blob[_HEADER.size :]
    if len(body) != c * m * m:
        raise TensorError(f"expected {c * m * m} payload bytes, found {len(body)}")
    return TopologyTensor(np.frombuffer(body, dtype=np.uint8).reshape(c, m, m))


def save(path, tensor: TopologyTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(tensor))


def load(path) -> TopologyTensor:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
