"""Binary section container shared by model and vector-cache files.

A file starts with an ASCII magic string, followed by a format-specific
fixed header, followed by named sections. Each section is:

    u32 name length, name bytes (UTF-8),
    u32 rows, u32 cols,
    rows * cols float32 values, row-major.

All integers and floats are little-endian. Truncated or malformed files
raise ModelFormatError; a reader never returns a partial model.
"""

from __future__ import annotations

import struct

import numpy as np


class ModelFormatError(ValueError):
    pass


def read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def check_magic(fh, magic: bytes) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise ModelFormatError(f"bad magic: expected {magic!r}, got {got!r}")


def write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh) -> int:
    return struct.unpack("<I", read_exact(fh, 4))[0]


def write_section(fh, name: str, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.float32)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"section {name!r}: only 1-D or 2-D arrays supported")
    encoded = name.encode("utf-8")
    write_u32(fh, len(encoded))
    fh.write(encoded)
    write_u32(fh, a.shape[0])
    write_u32(fh, a.shape[1])
    fh.write(np.ascontiguousarray(a).tobytes())


def read_section(fh) -> tuple[str, np.ndarray]:
    name_len = read_u32(fh)
    name = read_exact(fh, name_len).decode("utf-8")
    rows = read_u32(fh)
    cols = read_u32(fh)
    raw = read_exact(fh, rows * cols * 4)
    data = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()
    return name, data


def read_all_sections(fh) -> dict[str, np.ndarray]:
    """Read sections until EOF; duplicate names are an error."""
    sections: dict[str, np.ndarray] = {}
    while True:
        probe = fh.read(4)
        if not probe:
            return sections
        if len(probe) != 4:
            raise ModelFormatError("truncated file in section header")
        name_len = struct.unpack("<I", probe)[0]
        name = read_exact(fh, name_len).decode("utf-8")
        rows = read_u32(fh)
        cols = read_u32(fh)
        raw = read_exact(fh, rows * cols * 4)
        if name in sections:
            raise ModelFormatError(f"duplicate section {name!r}")
        sections[name] = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()
