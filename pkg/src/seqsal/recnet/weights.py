"""Binary weight files for the toy network.

Layout (little-endian throughout)::

    magic   b"SQSW"
    version u32 (= 1)
    count   u32
    count x { name_len u32, name utf-8, rank u32, dims u32 * rank, data f32 * prod(dims) }

Batch-norm running statistics are stored as ``<block>.bn.mean`` and
``<block>.bn.var`` next to the learnable parameters.
"""

from __future__ import annotations

import struct

import numpy as np

from .._io import atomic_write_bytes
from .model import ToyNet

MAGIC = b"SQSW"
VERSION = 1


class WeightFileError(ValueError):
    pass


def state_dict(model: ToyNet) -> dict[str, np.ndarray]:
    state = {k: p.data for k, p in model.params.items()}
    for name, bn in model.bn.items():
        state[f"{name}.bn.mean"] = bn.mean
        state[f"{name}.bn.var"] = bn.var
    return state


def dumps_weights(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def loads_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise WeightFileError("not a weight file (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise WeightFileError("weight file is truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    state = {}
    for _ in range(count):
        (n,) = take("<I")
        name = bytes(take(f"<{n}s")[0]).decode("utf-8")
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        state[name] = np.array(take(f"<{size}f"), dtype=np.float32).reshape(dims)
    if pos != len(data):
        raise WeightFileError(f"{len(data) - pos} trailing bytes after {count} tensors")
    return state


def save_weights(model: ToyNet, path) -> None:
    atomic_write_bytes(path, dumps_weights(state_dict(model)))


def load_weights(model: ToyNet, path) -> ToyNet:
    """Copy weights from ``path`` into ``model`` (shapes and names must match exactly)."""
    with open(path, "rb") as fh:
        state = loads_weights(fh.read())
    expected = state_dict(model)
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        raise WeightFileError(f"tensor names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, arr in state.items():
        if arr.shape != expected[name].shape:
            raise WeightFileError(f"{name}: shape {arr.shape} != {expected[name].shape}")
    for k, p in model.params.items():
        p.data = state[k].astype(np.float64)
    for name, bn in model.bn.items():
        bn.mean = state[f"{name}.bn.mean"].astype(np.float64)
        bn.var = state[f"{name}.bn.var"].astype(np.float64)
    return model
