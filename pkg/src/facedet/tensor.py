"""Dense float32 tensors and the DFW binary weight container.

A tensor is a numpy float32 array in (row, column, channel) order;
element (r, c, k) lives at flat offset (r*width + c)*channels + k.
A weight store is an ordered ``dict[str, np.ndarray]``.

DFW layout (all integers little-endian u32, all floats little-endian f32):
magic "DFW1", entry count, then per entry: name length, UTF-8 name bytes,
rank, ``rank`` dims, dims-product values.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import DimensionError, FormatError, NumericError

MAGIC = b"DFW1"

# Keeps the dims product of a single entry sane (< 2**32 elements and far
# below address space), so a corrupt header cannot trigger a huge allocation.
_MAX_ELEMENTS = 2**32 - 1


def validate_tensor3(arr: np.ndarray) -> np.ndarray:
    """Check the Tensor3 invariants: rank 3, dims >= 1, finite float32."""
    a = np.asarray(arr)
    if a.ndim != 3:
        raise DimensionError(f"expected rank-3 tensor, got rank {a.ndim}")
    if min(a.shape) < 1:
        raise DimensionError(f"all dimensions must be >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("tensor contains NaN or Inf")
    return a.astype(np.float32, copy=False)


def flat_offset(r: int, c: int, k: int, width: int, channels: int) -> int:
    """Flat index of element (r, c, k) in row-major (row, col, channel) order."""
    return (r * width + c) * channels + k


def _validate_store(store: dict[str, np.ndarray]) -> None:
    for name in store:
        if not isinstance(name, str) or not name:
            raise FormatError("weight store entry names must be non-empty strings")


def dfw_write(store: dict[str, np.ndarray], sink: BinaryIO) -> int:
    """Serialize a weight store to ``sink``; returns the byte count written."""
    _validate_store(store)
    written = 0

    def _put(data: bytes, context: str) -> None:
        nonlocal written
        try:
            sink.write(data)
        except OSError as exc:
            raise OSError(f"DFW write failed at entry {context!r}: {exc}") from exc
        written += len(data)

    _put(MAGIC + struct.pack("<I", len(store)), "<header>")
    for name, arr in store.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        if a.ndim == 0:
            a = a.reshape(1)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"entry {name!r} contains NaN or Inf")
        nb = name.encode("utf-8")
        header = struct.pack("<I", len(nb)) + nb
        header += struct.pack("<I", a.ndim)
        header += struct.pack(f"<{a.ndim}I", *a.shape)
        _put(header, name)
        _put(a.tobytes(), name)
    return written


def dfw_read(source: BinaryIO) -> dict[str, np.ndarray]:
    """Parse a DFW stream back into an ordered weight store."""
    offset = 0

    def _take(n: int, what: str) -> bytes:
        nonlocal offset
        data = source.read(n)
        if len(data) != n:
            raise FormatError(f"truncated DFW stream at offset {offset} reading {what}")
        offset += n
        return data

    if _take(4, "magic") != MAGIC:
        raise FormatError("bad magic: not a DFW1 stream")
    (count,) = struct.unpack("<I", _take(4, "entry count"))
    store: dict[str, np.ndarray] = {}
    for idx in range(count):
        (name_len,) = struct.unpack("<I", _take(4, f"entry {idx} name length"))
        try:
            name = _take(name_len, f"entry {idx} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {idx}: name is not valid UTF-8") from exc
        if not name:
            raise FormatError(f"entry {idx}: empty name")
        if name in store:
            raise FormatError(f"duplicate entry name {name!r}")
        (rank,) = struct.unpack("<I", _take(4, f"{name}: rank"))
        if rank == 0:
            raise FormatError(f"{name}: rank must be >= 1")
        dims = struct.unpack(f"<{rank}I", _take(4 * rank, f"{name}: dims"))
        if min(dims) < 1:
            raise FormatError(f"{name}: zero dimension in {dims}")
        n_elems = 1
        for d in dims:
            n_elems *= d
            if n_elems > _MAX_ELEMENTS:
                raise FormatError(f"{name}: dims product overflow in {dims}")
        raw = _take(4 * n_elems, f"{name}: values")
        store[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return store


def dfw_save(store: dict[str, np.ndarray], path: str) -> int:
    with open(path, "wb") as f:
        return dfw_write(store, f)


def dfw_load(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return dfw_read(f)
