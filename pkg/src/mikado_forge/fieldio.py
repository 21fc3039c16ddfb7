"""Flat binary container for torus fields.

Layout: magic b"TFLD", then u32 little-endian (version, d, n, rank), then the
payload as row-major little-endian float64.  Rank 0 holds one scalar array,
rank 1 holds d component arrays back to back.  Reports reference fields by
the sha256 of the whole file content.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .torus import Field, ScalarField, TorusGrid, VectorField

MAGIC = b"TFLD"
VERSION = 1


def _header(grid: TorusGrid, rank: int) -> bytes:
    return MAGIC + struct.pack("<III I", VERSION, grid.dim, grid.n, rank)


def field_bytes(f: Field) -> bytes:
    if isinstance(f, ScalarField):
        payload = f.values.astype("<f8").tobytes(order="C")
        return _header(f.grid, 0) + payload
    chunks = [_header(f.grid, 1)]
    for c in f.components:
        chunks.append(c.values.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def write_field(path: str | Path, f: Field) -> str:
    """Write a field; returns its content hash."""
    data = field_bytes(f)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def content_hash(f: Field) -> str:
    return hashlib.sha256(field_bytes(f)).hexdigest()


def read_field(path: str | Path) -> Field:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a TFLD container")
    version, d, n, rank = struct.unpack_from("<III I", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported TFLD version {version}")
    grid = TorusGrid(dim=d, n=n)
    count = n ** d
    off = 4 + 16
    if rank == 0:
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        return ScalarField(grid, vals.reshape(grid.shape).copy())
    if rank != 1:
        raise ValueError(f"{path}: unsupported rank {rank}")
    comps = []
    for _ in range(d):
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        comps.append(ScalarField(grid, vals.reshape(grid.shape).copy()))
        off += count * 8
    return VectorField.from_components(comps)
