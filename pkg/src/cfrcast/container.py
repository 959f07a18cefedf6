"""Little-endian tensor container shared by datasets and CFR series files.

Layout::

    repeated:  role u8 | "CFRD" | version u16 | dtype u8 | rank u8 | dims u64*rank | payload
    footer:    0xFF | scale f64 | threshold f64

dtype 0 is float64, dtype 1 is uint8 (used for opaque byte blobs).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"CFRD"
VERSION = 1
FOOTER_TAG = 0xFF
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}
_CHUNK = 1 << 22  # elements per write, keeps memory flat for strided views


def write_block(fh: BinaryIO, role: int, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dtype = np.dtype("<f8") if arr.dtype.kind == "f" else np.dtype("u1")
    if not 0 <= role < FOOTER_TAG:
        raise ValueError(f"role tag {role} out of range")
    fh.write(struct.pack("<B4sHBB", role, MAGIC, VERSION, _CODES[dtype], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    if arr.size == 0:
        return
    lead = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    step = max(1, _CHUNK // max(1, lead.shape[1]))
    for i in range(0, lead.shape[0], step):
        fh.write(np.ascontiguousarray(lead[i : i + step], dtype=dtype).tobytes())


def write_footer(fh: BinaryIO, scale: float, threshold: float) -> None:
    fh.write(struct.pack("<Bdd", FOOTER_TAG, scale, threshold))


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def read_container(path: str | Path) -> tuple[dict[int, np.ndarray], float, float]:
    """Return ``({role: array}, scale, threshold)``."""
    blocks: dict[int, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            tag = fh.read(1)
            if not tag:
                raise FormatError("missing footer" if blocks else "empty file")
            role = tag[0]
            if role == FOOTER_TAG:
                scale, threshold = struct.unpack("<dd", _read_exact(fh, 16, "footer"))
                if fh.read(1):
                    raise FormatError("trailing bytes after footer")
                return blocks, scale, threshold
            magic, version, code, rank = struct.unpack("<4sHBB", _read_exact(fh, 8, "header"))
            if magic != MAGIC:
                raise FormatError(f"bad magic {magic!r}")
            if version != VERSION:
                raise FormatError(f"unsupported format version {version}")
            if code not in _DTYPES:
                raise FormatError(f"unknown dtype code {code}")
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims"))
            dtype = _DTYPES[code]
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.fromfile(fh, dtype=dtype, count=count)
            if data.size != count:
                raise FormatError(f"truncated file while reading payload of role {role}")
            if role in blocks:
                raise FormatError(f"duplicate role {role}")
            blocks[role] = data.astype(dtype.newbyteorder("="), copy=False).reshape(dims)
