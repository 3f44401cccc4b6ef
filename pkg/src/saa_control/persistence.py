"""Little-endian binary files for P0 controls and P1 states.

Layout: 8-byte magic, unsigned 64-bit ``n``, then the coefficients as
IEEE-754 doubles (``2 n^2`` for controls, ``(n-1)^2`` for states).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mesh_fem import ControlField, StateField

P0_MAGIC = b"P0FIELD1"
P1_MAGIC = b"P1FIELD1"


def _write(path, magic: bytes, n: int, values: np.ndarray) -> None:
    with Path(path).open("wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def _read(path, magic: bytes, size) -> tuple[int, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != magic:
        raise ValueError(f"{path}: bad magic {data[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<Q", data[8:16])
    expected = size(n)
    values = np.frombuffer(data, dtype="<f8", offset=16)
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values for n={n}, found {values.size}")
    return int(n), values.astype(float)


def write_control(u: ControlField, path) -> None:
    _write(path, P0_MAGIC, u.mesh_n, u.values)


def read_control(path) -> ControlField:
    n, v = _read(path, P0_MAGIC, lambda n: 2 * n * n)
    return ControlField(n, v)


def write_state(y: StateField, path) -> None:
    _write(path, P1_MAGIC, y.mesh_n, y.values)


def read_state(path) -> StateField:
    n, v = _read(path, P1_MAGIC, lambda n: (n - 1) ** 2)
    return StateField(n, v)
