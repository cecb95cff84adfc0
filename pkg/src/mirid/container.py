"""Self-describing binary container for datasets, checkpoints and recons.

Layout (all integers little-endian):

===========  ====================================================
bytes        meaning
===========  ====================================================
8            magic ``MIRIDSET``
u32          format version (currently 1)
u32          entry count
per entry:
  u16        name length, then that many UTF-8 bytes
  u8         dtype code: 0 complex double pair, 1 real double,
             2 u8 boolean
  u8         rank
  rank*u64   extents
  payload    row-major little-endian values
===========  ====================================================

Entries are written sorted by name, so a container built from the same
arrays is byte-identical regardless of construction order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MIRIDSET"
VERSION = 1

_DTYPE_COMPLEX = 0
_DTYPE_REAL = 1
_DTYPE_BOOL = 2

_CODES = {
    _DTYPE_COMPLEX: np.dtype("<c16"),
    _DTYPE_REAL: np.dtype("<f8"),
    _DTYPE_BOOL: np.dtype("u1"),
}


def _code_for(array: np.ndarray) -> int:
    kind = array.dtype.kind
    if kind == "c":
        return _DTYPE_COMPLEX
    if kind == "b" or array.dtype == np.uint8:
        return _DTYPE_BOOL
    if kind in "fiu":
        return _DTYPE_REAL
    raise ValueError(f"unsupported dtype {array.dtype}")


def write_container(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays; names must be unique non-empty strings."""
    names = sorted(arrays)
    if len(set(names)) != len(names):
        raise ValueError("duplicate array names")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        encoded = name.encode("utf-8")
        if not encoded:
            raise ValueError("empty array name")
        array = np.asarray(arrays[name])
        code = _code_for(array)
        payload = np.ascontiguousarray(array, dtype=_CODES[code]).tobytes()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(payload)
    Path(path).write_bytes(b"".join(chunks))


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container back; rejects bad magic, versions and truncation."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a MIRIDSET container")
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    arrays: dict[str, np.ndarray] = {}
    offset = 16
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", raw, offset)
        offset += 2
        if code not in _CODES:
            raise ValueError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack_from(f"<{rank}Q", raw, offset)
        offset += 8 * rank
        dtype = _CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated payload for {name}")
        flat = np.frombuffer(raw, dtype=dtype, count=max(int(np.prod(shape)), 1) if rank else 1,
                             offset=offset)
        offset += nbytes
        array = flat.reshape(shape).copy()
        if code == _DTYPE_BOOL:
            array = array.astype(bool)
        if name in arrays:
            raise ValueError(f"{path}: duplicate array name {name}")
        arrays[name] = array
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return arrays


def write_pgm(path: str | Path, image: np.ndarray) -> float:
    """16-bit binary PGM of a nonnegative image, linearly scaled to 65535.

    The scale factor is returned and written to ``<path>.scale.txt`` so the
    quantized magnitudes can be mapped back to physical units.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM export expects a 2-D image")
    peak = float(np.max(image)) if image.size else 0.0
    scale = 65535.0 / peak if peak > 0 else 1.0
    quantized = np.clip(np.round(image * scale), 0, 65535).astype(">u2")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())
    Path(str(path) + ".scale.txt").write_text(f"{scale!r}\n")
    return scale
