"""Little-endian binary container: magic, version, JSON metadata, named arrays.

Shared by the mesh asset and checkpoint formats (docs/asset_format.md,
docs/checkpoint_format.md). Reads are strict: any short read raises the
caller's error class, so truncated files never half-load.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

_DTYPE_CODES = {0: "<f4", 1: "<u4", 2: "<u1", 3: "<f8", 4: "<i8"}
_CODE_FOR = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


def write_container(path, magic: bytes, version: int, meta: dict,
                    arrays: dict[str, np.ndarray]):
    buf = io.BytesIO()
    buf.write(magic)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<IQ", version, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODE_FOR:
            raise ValueError(f"unsupported dtype {arr.dtype} for section {name!r}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_container(path, magic: bytes, version: int, error_cls=ValueError):
    def read_exact(fh, n):
        data = fh.read(n)
        if len(data) != n:
            raise error_cls("truncated file")
        return data

    with open(path, "rb") as fh:
        if read_exact(fh, len(magic)) != magic:
            raise error_cls(f"bad magic, expected {magic!r}")
        got_version, meta_len = struct.unpack("<IQ", read_exact(fh, 12))
        if got_version != version:
            raise error_cls(f"unsupported version {got_version}")
        try:
            meta = json.loads(read_exact(fh, meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise error_cls(f"bad metadata: {e}") from e
        (count,) = struct.unpack("<I", read_exact(fh, 4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", read_exact(fh, 2))
            name = read_exact(fh, name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", read_exact(fh, 2))
            if code not in _DTYPE_CODES:
                raise error_cls(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}Q", read_exact(fh, 8 * ndim))
            dtype = np.dtype(_DTYPE_CODES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arrays[name] = np.frombuffer(read_exact(fh, nbytes), dtype=dtype).reshape(shape).copy()
    return meta, arrays
