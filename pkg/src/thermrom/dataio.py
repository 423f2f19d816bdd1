"""Snapshot dataset persistence.

Binary layout (all integers and floats little-endian):

    magic   8 bytes  b"THRMDST1"
    version u32
    N       u64      state dimension
    n_t     u64      snapshot count
    p       u64      parameter dimension (0 = non-parametric)
    flags   u32      bit 0: derivatives present, bit 1: grid metadata present
    [grid]  4 f64    dx, dt, x0, x1            (if flagged)
    mu      p f64
    times   n_t f64
    states  n_t*N f64   row-major, time-major
    derivs  n_t*N f64   (if flagged)

A CSV export mirrors the same content for inspection.
"""
from __future__ import annotations

import struct

import numpy as np

from .fom import SnapshotSet

MAGIC = b"THRMDST1"
VERSION = 1
_FLAG_DERIVS = 1
_FLAG_GRID = 2


class DatasetFormatError(ValueError):
    pass


def dataset_write(snapshots: SnapshotSet, path):
    n_t, N = snapshots.states.shape
    p = 0 if snapshots.mu is None else len(snapshots.mu)
    flags = 0
    if snapshots.derivs is not None:
        flags |= _FLAG_DERIVS
    if snapshots.grid is not None:
        flags |= _FLAG_GRID
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQQQI", VERSION, N, n_t, p, flags))
        if snapshots.grid is not None:
            g = snapshots.grid
            fh.write(struct.pack("<4d", g["dx"], g["dt"], g["x0"], g["x1"]))
        if p:
            fh.write(np.ascontiguousarray(snapshots.mu, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(snapshots.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(snapshots.states, dtype="<f8").tobytes())
        if snapshots.derivs is not None:
            fh.write(np.ascontiguousarray(snapshots.derivs, dtype="<f8").tobytes())


def dataset_read(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r} in {path}")
        header = fh.read(struct.calcsize("<IQQQI"))
        if len(header) != struct.calcsize("<IQQQI"):
            raise DatasetFormatError("truncated header")
        version, N, n_t, p, flags = struct.unpack("<IQQQI", header)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        grid = None
        if flags & _FLAG_GRID:
            dx, dt, x0, x1 = struct.unpack("<4d", fh.read(32))
            grid = {"dx": dx, "dt": dt, "x0": x0, "x1": x1}
        mu = _read_block(fh, (p,)) if p else None
        times = _read_block(fh, (n_t,))
        states = _read_block(fh, (n_t, N))
        derivs = _read_block(fh, (n_t, N)) if flags & _FLAG_DERIVS else None
        trailing = fh.read(1)
    if trailing:
        raise DatasetFormatError("trailing bytes after dataset payload")
    return SnapshotSet(times=times, states=states, mu=mu, derivs=derivs, grid=grid)


def _read_block(fh, shape):
    count = int(np.prod(shape))
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise DatasetFormatError(f"dataset block truncated: wanted {count} floats")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)


def dataset_to_csv(snapshots: SnapshotSet, path):
    n_t, N = snapshots.states.shape
    has_derivs = snapshots.derivs is not None
    with open(path, "w") as fh:
        if snapshots.mu is not None:
            fh.write("# mu," + ",".join(f"{v:.17g}" for v in snapshots.mu) + "\n")
        if snapshots.grid is not None:
            g = snapshots.grid
            fh.write(f"# grid,dx={g['dx']:.17g},dt={g['dt']:.17g},"
                     f"x0={g['x0']:.17g},x1={g['x1']:.17g}\n")
        cols = ["time"] + [f"s{j}" for j in range(N)]
        if has_derivs:
            cols += [f"d{j}" for j in range(N)]
        fh.write(",".join(cols) + "\n")
        for k in range(n_t):
            row = [f"{snapshots.times[k]:.17g}"]
            row += [f"{v:.17g}" for v in snapshots.states[k]]
            if has_derivs:
                row += [f"{v:.17g}" for v in snapshots.derivs[k]]
            fh.write(",".join(row) + "\n")
