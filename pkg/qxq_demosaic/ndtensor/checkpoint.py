"""Flat binary container for named arrays.

Layout (all integers little-endian)::

    magic      8 bytes  b"QXQCKPT\\0"
    version    u32
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON
    count      u32
    count x entry:
        name_len u16, name (UTF-8)
        dtype    u8   (0 = float32, 1 = float64, 2 = int64)
        ndim     u8, ndim x u32 dims
        data     prod(dims) * itemsize bytes, little-endian, C order
"""

import json
import struct
from typing import Any

import numpy as np

from ..errors import LoadError

MAGIC = b"QXQCKPT\0"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


def dumps(entries: dict[str, np.ndarray], metadata: dict[str, Any] | None = None) -> bytes:
    """Serialize named arrays plus a JSON metadata block."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(entries))]
    for name, array in entries.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise LoadError(f"unsupported dtype {array.dtype} for entry '{name}'")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Inverse of :func:`dumps`."""
    view = memoryview(blob)
    if bytes(view[: len(MAGIC)]) != MAGIC:
        raise LoadError("not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    try:
        version, meta_len = struct.unpack_from("<II", view, offset)
        if version != FORMAT_VERSION:
            raise LoadError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
        offset += 8
        metadata = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
        offset += meta_len
        (count,) = struct.unpack_from("<I", view, offset)
        offset += 4

        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", view, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(view):
                raise LoadError(f"checkpoint truncated inside entry '{name}'")
            entries[name] = np.frombuffer(view[offset : offset + nbytes], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
            offset += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise LoadError(f"corrupt checkpoint: {e}") from None
    return entries, metadata
