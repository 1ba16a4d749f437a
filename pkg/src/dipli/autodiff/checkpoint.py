"""Binary parameter checkpoints.

Layout (all integers little-endian ``u32``)::

    magic b"DPLI"  version  tensor_count
    repeated tensor_count times:
        name_length  name(utf-8)  rank  dim_0 ... dim_{rank-1}  float64 payload (little-endian, C order)
"""

import struct

import numpy as np

from ..errors import CorruptHeader, IoFailure, TruncatedData
from .tensor import Tensor

__all__ = ["save_params", "load_params", "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION"]

CHECKPOINT_MAGIC = b"DPLI"
CHECKPOINT_VERSION = 1


def save_params(params, path):
    """Write a ``name -> Tensor | ndarray`` mapping, preserving its order."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_params(path):
    """Read a checkpoint back as an ordered ``name -> ndarray`` dict."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedData(f"checkpoint ends early, needed {n} more bytes", len(buf))
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise CorruptHeader("not a dipli checkpoint", 0)
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CorruptHeader(f"unsupported checkpoint version {version}", 4)
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        params[name] = data
    return params
