"""Binary tensor and joint-sequence file formats.

Tensor file: magic b"T3TN", u8 rank, rank x u32 little-endian dims, then the
row-major payload as little-endian float32 (values narrowed from float64).

Joint file: magic b"T3JT", u32 T, u32 J, then T*J*3 little-endian float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .tensor import Tensor

TENSOR_MAGIC = b"T3TN"
JOINTS_MAGIC = b"T3JT"


def dump_tensor(t: Tensor, path) -> None:
    data = t.data
    if data.ndim > 255:
        raise InputError("tensor rank exceeds format limit")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<B", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise InputError(f"{path}: bad tensor magic {raw[:4]!r}")
    rank = raw[4]
    header_end = 5 + 4 * rank
    if len(raw) < header_end:
        raise InputError(f"{path}: truncated tensor header")
    dims = struct.unpack(f"<{rank}I", raw[5:header_end])
    count = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(raw, dtype="<f4", offset=header_end)
    if payload.size != count:
        raise InputError(f"{path}: payload has {payload.size} values, header says {count}")
    return Tensor(payload.astype(np.float64).reshape(dims))


def dump_joints(joints: np.ndarray, path) -> None:
    if joints.ndim != 3 or joints.shape[2] != 3:
        raise InputError(f"joints must be [T, J, 3], got {joints.shape}")
    t, j, _ = joints.shape
    with open(path, "wb") as fh:
        fh.write(JOINTS_MAGIC)
        fh.write(struct.pack("<II", t, j))
        fh.write(np.ascontiguousarray(joints, dtype="<f4").tobytes())


def load_joints(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != JOINTS_MAGIC:
        raise InputError(f"{path}: bad joints magic {raw[:4]!r}")
    t, j = struct.unpack("<II", raw[4:12])
    payload = np.frombuffer(raw, dtype="<f4", offset=12)
    if payload.size != t * j * 3:
        raise InputError(f"{path}: payload has {payload.size} values, header says {t * j * 3}")
    return payload.astype(np.float64).reshape(t, j, 3)
