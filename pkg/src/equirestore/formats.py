"""Binary file formats for tensors and networks, little-endian throughout.

Tensor files (magic ``EQT1``) carry a channel stack over one grid; network
files (magic ``EQN1``) carry layer structure, filters (sparse supports or
dense base rows), and per-channel biases.  Network files do not embed the
grid shape; readers supply it (the CLI gets it from the image, dataset, or
an explicit flag).  All readers reject wrong magic, truncation, and
trailing bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .circular import Shape, as_shape
from .errors import DecodeError, ShapeError
from .network import CircularFilter, EquivariantLayer, EquivariantNetwork

TENSOR_MAGIC = b"EQT1"
NETWORK_MAGIC = b"EQN1"

_DTYPE_TAGS = {"f64": 0, "u8": 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}
_ACTIVATION_TAGS = {"identity": 0, "relu": 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}


class _Reader:
    def __init__(self, data: bytes, label: str):
        self.data = data
        self.offset = 0
        self.label = label

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise DecodeError(
                f"truncated {self.label}: wanted {count} bytes", offset=self.offset
            )
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64s(self, count: int) -> np.ndarray:
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise DecodeError(
                f"{len(self.data) - self.offset} trailing bytes in {self.label}",
                offset=self.offset,
            )


def tensor_bytes(values, dtype: str = "f64") -> bytes:
    """Serialize a (C, *dims) or (*dims) stack; dtype 'u8' requires integer
    values in [0, 256)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError("cannot serialize a scalar tensor")
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
        channels, dims = 1, arr.shape[1:]
    else:
        channels, dims = arr.shape[0], arr.shape[1:]
    if dtype not in _DTYPE_TAGS:
        raise ShapeError(f"dtype must be one of {sorted(_DTYPE_TAGS)}, got {dtype!r}")
    out = [TENSOR_MAGIC, struct.pack("<I", len(dims))]
    out.extend(struct.pack("<I", n) for n in dims)
    out.append(struct.pack("<I", channels))
    out.append(struct.pack("<B", _DTYPE_TAGS[dtype]))
    if dtype == "u8":
        ints = np.rint(arr)
        if not np.array_equal(ints, arr) or arr.min() < 0 or arr.max() > 255:
            raise ShapeError("u8 tensor payload requires integer values in [0, 256)")
        out.append(ints.astype("<u1").tobytes())
    else:
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def parse_tensor(data: bytes, label: str = "tensor data") -> tuple[np.ndarray, str]:
    """Inverse of :func:`tensor_bytes`; returns float64 stack and dtype tag."""
    r = _Reader(data, label)
    if r.take(4) != TENSOR_MAGIC:
        raise DecodeError(f"bad magic in {label}, expected {TENSOR_MAGIC!r}", offset=0)
    arity = r.u32()
    if arity == 0 or arity > 16:
        raise DecodeError(f"implausible tensor arity {arity} in {label}", offset=4)
    dims = tuple(r.u32() for _ in range(arity))
    shape = as_shape(dims)  # validates positivity
    channels = r.u32()
    if channels == 0:
        raise DecodeError(f"zero channels in {label}", offset=r.offset - 4)
    tag = r.u8()
    if tag not in _TAG_DTYPES:
        raise DecodeError(f"unknown dtype tag {tag} in {label}", offset=r.offset - 1)
    count = channels * shape.size
    if _TAG_DTYPES[tag] == "u8":
        payload = np.frombuffer(r.take(count), dtype="<u1").astype(np.float64)
    else:
        payload = r.f64s(count)
    r.finish()
    return payload.reshape((channels,) + dims), _TAG_DTYPES[tag]


def write_tensor(path, values, dtype: str = "f64") -> None:
    Path(path).write_bytes(tensor_bytes(values, dtype))


def read_tensor(path) -> tuple[np.ndarray, str]:
    path = Path(path)
    return parse_tensor(path.read_bytes(), label=str(path))


def network_bytes(net: EquivariantNetwork) -> bytes:
    """Serialize layer structure, filters, and biases (not the grid shape)."""
    out = [NETWORK_MAGIC, struct.pack("<I", net.depth)]
    for layer in net.layers:
        out.append(struct.pack("<IIB", layer.in_channels, layer.out_channels,
                               _ACTIVATION_TAGS[layer.activation]))
        for row in layer.filters:
            for f in row:
                if f.support is not None:
                    out.append(struct.pack("<BI", 1, len(f.support)))
                    for off, w in f.support:
                        out.append(struct.pack("<Id", off, w))
                else:
                    out.append(struct.pack("<B", 0))
                    out.append(f.base.astype("<f8").tobytes())
        out.append(np.asarray(layer.biases, dtype="<f8").tobytes())
    return b"".join(out)


def parse_network(data: bytes, shape, label: str = "network data") -> EquivariantNetwork:
    """Inverse of :func:`network_bytes` for a known grid shape."""
    shape = as_shape(shape)
    n = shape.size
    r = _Reader(data, label)
    if r.take(4) != NETWORK_MAGIC:
        raise DecodeError(f"bad magic in {label}, expected {NETWORK_MAGIC!r}", offset=0)
    depth = r.u32()
    if depth > 4096:
        raise DecodeError(f"implausible depth {depth} in {label}", offset=4)
    layers = []
    for _ in range(depth):
        n_in = r.u32()
        n_out = r.u32()
        act_tag = r.u8()
        if act_tag not in _TAG_ACTIVATIONS:
            raise DecodeError(f"unknown activation tag {act_tag} in {label}",
                              offset=r.offset - 1)
        if n_in == 0 or n_out == 0 or n_in > 65536 or n_out > 65536:
            raise DecodeError(f"implausible channel counts ({n_in}, {n_out}) in {label}",
                              offset=r.offset - 9)
        filters = []
        for _ in range(n_out):
            row = []
            for _ in range(n_in):
                if r.u8():
                    size = r.u32()
                    pairs = []
                    for _ in range(size):
                        off = r.u32()
                        if off >= n:
                            raise DecodeError(
                                f"support offset {off} out of range [0, {n}) in {label}",
                                offset=r.offset - 12,
                            )
                        pairs.append((off, float(r.f64s(1)[0])))
                    row.append(CircularFilter.sparse(shape, pairs))
                else:
                    row.append(CircularFilter.dense(r.f64s(n).reshape(shape.dims), shape))
            filters.append(tuple(row))
        biases = tuple(float(b) for b in r.f64s(n_out))
        layers.append(EquivariantLayer(tuple(filters), biases,
                                       activation=_TAG_ACTIVATIONS[act_tag]))
    r.finish()
    return EquivariantNetwork(tuple(layers), shape)


def write_network(path, net: EquivariantNetwork) -> None:
    Path(path).write_bytes(network_bytes(net))


def read_network(path, shape) -> EquivariantNetwork:
    path = Path(path)
    return parse_network(path.read_bytes(), shape, label=str(path))
