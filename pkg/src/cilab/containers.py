"""Self-describing binary field container and CSV emitters.

Record layout (little endian):
  magic  "CILAB1"                         6 bytes
  u32    n_space, u32 n_time              grid
  f64    box_len, f64 t_final
  4 byte rank tag: b"scl", b"vec", b"sym" or b"map", NUL padded
  u32    component count
  data   count * n_time * n_space^3 f64, slice-major then row-major

Several records may be concatenated in one file; readers consume exactly
one record per call.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import ConfigError
from .fields import Grid, MapField, ScalarField, SymTensorField, VectorField

MAGIC = b"CILAB1"
_HEADER = struct.Struct("<IIdd4sI")

_RANKS = {ScalarField: b"scl\0", VectorField: b"vec\0",
          SymTensorField: b"sym\0", MapField: b"map\0"}


def _components(field):
    if isinstance(field, ScalarField):
        return [field.data]
    if isinstance(field, MapField):
        return [c.data for c in field.displacement.components]
    return [c.data for c in field.components]


def write_record(fh, field):
    rank = _RANKS.get(type(field))
    if rank is None:
        raise ConfigError(f"cannot serialize {type(field).__name__}")
    g = field.grid
    comps = _components(field)
    fh.write(MAGIC)
    fh.write(_HEADER.pack(g.n_space, g.n_time, g.box_len, g.t_final, rank, len(comps)))
    for c in comps:
        fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def read_record(fh, grid: Grid | None = None):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ConfigError(f"bad magic {magic!r}")
    n, nt, box, tf, rank, count = _HEADER.unpack(fh.read(_HEADER.size))
    g = grid if grid is not None else Grid(n, nt, box, tf)
    if (g.n_space, g.n_time) != (n, nt):
        raise ConfigError("container grid does not match expected grid")
    comps = []
    per = nt * n ** 3
    for _ in range(count):
        buf = fh.read(per * 8)
        if len(buf) != per * 8:
            raise ConfigError("truncated container record")
        comps.append(np.frombuffer(buf, dtype="<f8").reshape(g.shape).copy())
    tag = rank.rstrip(b"\0")
    if tag == b"scl":
        return ScalarField(g, comps[0])
    if tag == b"vec":
        return VectorField(g, comps)
    if tag == b"sym":
        return SymTensorField(g, comps)
    if tag == b"map":
        return MapField(g, VectorField(g, comps))
    raise ConfigError(f"unknown rank tag {rank!r}")


def save_field(path, field):
    with open(path, "wb") as fh:
        write_record(fh, field)


def load_field(path, grid=None):
    with open(path, "rb") as fh:
        return read_record(fh, grid)


def write_norm_csv(path, rows):
    """rows: iterable of (name, order, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "order", "value"])
        for name, order, value in rows:
            w.writerow([name, order, f"{value:.17g}"])


def write_series_csv(path, times, energy, helicity, cross, moments):
    """Per-slice conserved-quantity time series; moments is (nt, 6)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy", "helicity", "cross_helicity",
                    "m_tx", "m_ty", "m_tz", "m_rx", "m_ry", "m_rz"])
        for i, t in enumerate(times):
            row = [f"{t:.17g}", f"{energy[i]:.17g}", f"{helicity[i]:.17g}",
                   f"{cross[i]:.17g}"] + [f"{m:.17g}" for m in moments[i]]
            w.writerow(row)
