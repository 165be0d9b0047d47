"""Field snapshot files.

Binary layout (all little-endian)::

    magic   4 bytes   b"PZFS"
    d       int32
    n       int32
    L       float64
    ncomp   int32
    data    ncomp * n**d float64, component-major, x fastest within a component

A sidecar ``<name>.txt`` manifest repeats the header as ``key = value`` lines
plus any caller metadata.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .fields import Field, Grid, ScalarField, TensorField, VectorField

MAGIC = b"PZFS"
_HEADER = struct.Struct("<4siidi")


def _field_class(d, ncomp):
    if ncomp == 1:
        return ScalarField
    if ncomp == d:
        return VectorField
    if ncomp == d * d:
        return TensorField
    raise ValueError(f"cannot map {ncomp} components to a field of dimension {d}")


def write_snapshot(path, field: Field, **metadata):
    path = Path(path)
    g = field.grid
    comps = field.values.reshape((-1,) + g.shape)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.d, g.n, float(g.L), comps.shape[0]))
        for c in comps:
            # transpose so the first spatial index varies fastest
            fh.write(np.ascontiguousarray(c.T).astype("<f8").tobytes())
    with open(path.with_suffix(path.suffix + ".txt"), "w") as fh:
        fh.write(f"format = PZFS\nd = {g.d}\nn = {g.n}\nL = {g.L!r}\ncomponents = {comps.shape[0]}\n")
        fh.write(f"kind = {type(field).__name__}\n")
        for key, value in metadata.items():
            fh.write(f"{key} = {value}\n")
    return path


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    magic, d, n, L, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    grid = Grid(n, L, d)
    count = ncomp * n**d
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size)
    if data.size != count:
        raise ValueError(f"{path}: truncated snapshot")
    comps = data.reshape((ncomp,) + (n,) * d)
    comps = np.stack([c.T for c in comps])
    cls = _field_class(d, ncomp)
    return cls(grid, comps.reshape((d,) * cls.rank + grid.shape))


def write_slice_csv(path, field: Field, axis: int = 0):
    """Values along one coordinate axis through the origin node."""
    g = field.grid
    x = np.arange(g.n) * (g.L / g.n)
    comps = field.values.reshape((-1,) + g.shape)
    index = [0] * g.d
    index[axis] = slice(None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x"] + [f"c{i}" for i in range(comps.shape[0])])
        cols = [c[tuple(index)] for c in comps]
        for row in zip(x, *cols):
            writer.writerow([repr(float(a)) for a in row])
    return path
