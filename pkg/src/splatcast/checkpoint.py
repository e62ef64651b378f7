"""Binary parameter checkpoints.

Layout (all little-endian):

    magic   4 bytes  b"ODGS"
    version u32      1 = bare parameter table, 2 = JSON metadata block follows
    [v2]    u32 byte length + UTF-8 JSON metadata
    count   u32
    then per parameter:
        name length u16, name bytes (UTF-8)
        rank u8, extents u32 x rank
        dtype flag u8 (0 = f32, 1 = f64)
        payload (row-major)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ODGS"

_FLAG_TO_DTYPE = {0: np.float32, 1: np.float64}
_DTYPE_TO_FLAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays (and optional JSON metadata) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC]
    if meta is None:
        chunks.append(struct.pack("<I", 1))
    else:
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        chunks.append(struct.pack("<I", 2))
        chunks.append(struct.pack("<I", len(blob)))
        chunks.append(blob)
    chunks.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TO_FLAG:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:32]}...")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<B", _DTYPE_TO_FLAG[arr.dtype]))
        chunks.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read a checkpoint, returning (params, meta)."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = unpack("<I")
    meta = None
    if version == 2:
        (mlen,) = unpack("<I")
        meta = json.loads(buf[pos:pos + mlen].decode("utf-8"))
        pos += mlen
    elif version != 1:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (count,) = unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = unpack("<H")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = unpack("<B")
        extents = unpack(f"<{rank}I") if rank else ()
        (flag,) = unpack("<B")
        if flag not in _FLAG_TO_DTYPE:
            raise CheckpointError(f"{path}: bad dtype flag {flag} for {name!r}")
        dtype = np.dtype(_FLAG_TO_DTYPE[flag]).newbyteorder("<")
        n = int(np.prod(extents, dtype=np.int64)) if rank else 1
        nbytes = n * dtype.itemsize
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(extents)
        pos += nbytes
        params[name] = arr.astype(_FLAG_TO_DTYPE[flag])
    return params, meta
