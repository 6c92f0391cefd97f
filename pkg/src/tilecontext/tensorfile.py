"""Binary tensor files and checkpoint directories.

File layout: magic ``XTT1``, one u8 dtype code (0 = float64, 1 = float32),
one u8 rank, then rank little-endian u64 extents, then the row-major payload
in the same byte order. Round-trips are bit-exact.

A checkpoint is a directory of tensor files plus a plain-text ``manifest.txt``
with one tab-separated ``name<TAB>shape<TAB>file`` line per tensor, where
shape is ``x``-joined extents (``scalar`` for rank 0).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor

MAGIC = b"XTT1"
_CODE_TO_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_KIND_TO_CODE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}

MANIFEST_NAME = "manifest.txt"


def save_tensor(path, arr) -> None:
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    if arr.dtype not in _KIND_TO_CODE:
        raise ContractViolation(f"unsupported dtype {arr.dtype}; use float64 or float32")
    code = _KIND_TO_CODE[arr.dtype]
    if arr.ndim > 255:
        raise ContractViolation("rank exceeds u8")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_CODE_TO_DTYPE[code], copy=False)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ContractViolation(f"{path}: bad magic {blob[:4]!r}")
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _CODE_TO_DTYPE:
        raise ContractViolation(f"{path}: unknown dtype code {code}")
    extents = struct.unpack_from(f"<{rank}Q", blob, 6)
    dtype = _CODE_TO_DTYPE[code]
    offset = 6 + 8 * rank
    count = int(np.prod(extents)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise ContractViolation(
            f"{path}: payload length {len(blob) - offset} != expected {expected - offset}")
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return arr.reshape(extents).copy()


def _shape_token(shape) -> str:
    return "x".join(str(e) for e in shape) if shape else "scalar"


def save_checkpoint(directory, tensors: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in tensors:
        arr = tensors[name]
        if isinstance(arr, Tensor):
            arr = arr.data
        fname = f"{name}.xtt"
        save_tensor(directory / fname, arr)
        lines.append(f"{name}\t{_shape_token(arr.shape)}\t{fname}")
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise ContractViolation(f"no {MANIFEST_NAME} in {directory}")
    out: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ContractViolation(f"malformed manifest line: {line!r}")
        name, shape_tok, fname = parts
        arr = load_tensor(directory / fname)
        if _shape_token(arr.shape) != shape_tok:
            raise ContractViolation(
                f"{name}: manifest shape {shape_tok} != file shape {_shape_token(arr.shape)}")
        out[name] = arr
    return out
