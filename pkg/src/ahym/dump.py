"""Versioned binary field dumps.

Layout, all integers little-endian ``u32``::

    b"AHYM"  version  n  N_1 .. N_n  r  flags  data

``flags`` marks which fields follow (bit 0: H, bit 1: Phi, bit 2: s). Each
present field is ``prod(N_i) * r * r`` complex values in C order over
``(N_1, .., N_n, r, r)``, stored as little-endian float64 (re, im) pairs,
in the order H, Phi, s.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AHYM"
VERSION = 1
FIELDS = ("H", "Phi", "s")
_DTYPE = np.dtype("<c16")


class DumpError(ValueError):
    pass


def write_dump(path, H: np.ndarray, Phi: np.ndarray | None = None, s: np.ndarray | None = None) -> None:
    H = np.asarray(H)
    r = H.shape[-1]
    grid = H.shape[:-2]
    present = {"H": H, "Phi": Phi, "s": s}
    flags = 0
    for bit, name in enumerate(FIELDS):
        f = present[name]
        if f is None:
            continue
        if np.shape(f) != H.shape:
            raise DumpError(f"field {name} has shape {np.shape(f)}, expected {H.shape}")
        flags |= 1 << bit
    head = MAGIC + struct.pack(f"<{3 + len(grid) + 1}I", VERSION, len(grid), *grid, r, flags)
    with open(path, "wb") as fh:
        fh.write(head)
        for name in FIELDS:
            if present[name] is not None:
                fh.write(np.ascontiguousarray(present[name], dtype=_DTYPE).tobytes())


def read_dump(path) -> dict[str, np.ndarray]:
    """Return the stored fields keyed by ``"H"``, ``"Phi"`` and ``"s"``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DumpError(f"{path}: not a field dump (bad magic)")
    pos = 4

    def u32(count=1):
        nonlocal pos
        if pos + 4 * count > len(raw):
            raise DumpError(f"{path}: truncated header")
        vals = struct.unpack_from(f"<{count}I", raw, pos)
        pos += 4 * count
        return vals

    (version,) = u32()
    if version != VERSION:
        raise DumpError(f"{path}: unsupported dump version {version}")
    (n,) = u32()
    grid = u32(n)
    r, flags = u32(2)
    shape = tuple(grid) + (r, r)
    size = int(np.prod(shape)) * _DTYPE.itemsize
    out = {}
    for bit, name in enumerate(FIELDS):
        if not flags & (1 << bit):
            continue
        if pos + size > len(raw):
            raise DumpError(f"{path}: truncated field {name}")
        out[name] = np.frombuffer(raw, _DTYPE, count=size // _DTYPE.itemsize, offset=pos).reshape(shape).astype(complex)
        pos += size
    if pos != len(raw):
        raise DumpError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
