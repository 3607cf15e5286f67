"""Sampled fields on a periodic space-time lattice.

All fields live on a cubic periodic box [0, L)^3 sampled at n_space points
per axis, stacked over n_time slices of [0, t_final].  Arrays are double
precision, indexed (t, x1, x2, x3), and frozen after construction: every
operation returns a new field.  Compactly supported data is emulated by
keeping supports strictly inside the box (see SupportBox).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


class Grid:
    """Periodic sampling lattice: n_space^3 points in space, n_time slices."""

    __slots__ = ("n_space", "box_len", "n_time", "t_final", "h", "dt")

    def __init__(self, n_space, n_time, box_len=2.0 * np.pi, t_final=1.0):
        if n_space < 8 or n_space % 2 != 0:
            raise ConfigError(f"n_space must be even and >= 8, got {n_space}")
        if n_time < 2:
            raise ConfigError(f"n_time must be >= 2, got {n_time}")
        if box_len <= 0 or t_final <= 0:
            raise ConfigError("box_len and t_final must be positive")
        self.n_space = int(n_space)
        self.n_time = int(n_time)
        self.box_len = float(box_len)
        self.t_final = float(t_final)
        self.h = self.box_len / self.n_space
        self.dt = self.t_final / (self.n_time - 1)

    @property
    def shape(self):
        n = self.n_space
        return (self.n_time, n, n, n)

    @property
    def cell_volume(self):
        return self.h ** 3

    @property
    def center(self):
        return np.full(3, 0.5 * self.box_len)

    def axis(self):
        return np.arange(self.n_space) * self.h

    def times(self):
        return np.arange(self.n_time) * self.dt

    def wavenumbers(self):
        """Angular wavenumbers for one axis, FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_space, d=self.h)

    def nyquist(self):
        return np.pi / self.h

    def coords(self):
        """Spatial coordinate arrays, each shaped (n, n, n)."""
        x = self.axis()
        return np.meshgrid(x, x, x, indexing="ij")

    def same_as(self, other: "Grid") -> bool:
        return (self.n_space == other.n_space and self.n_time == other.n_time
                and self.box_len == other.box_len and self.t_final == other.t_final)

    def __repr__(self):
        return (f"Grid(n_space={self.n_space}, n_time={self.n_time}, "
                f"box_len={self.box_len:g}, t_final={self.t_final:g})")


class ScalarField:
    """Real samples indexed (t, x1, x2, x3)."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: Grid, data, check=True):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != grid.shape:
            raise ConfigError(f"data shape {data.shape} != grid shape {grid.shape}")
        if check and not np.all(np.isfinite(data)):
            raise ConfigError("field contains non-finite values")
        self.grid = grid
        self.data = _freeze(data)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape), check=False)

    @classmethod
    def from_function(cls, grid, fn, time_dependent=False):
        """Sample fn(x1, x2, x3) or fn(x1, x2, x3, t) on the lattice."""
        xx = grid.coords()
        if time_dependent:
            out = np.empty(grid.shape)
            for it, t in enumerate(grid.times()):
                out[it] = fn(*xx, t)
            return cls(grid, out)
        sl = np.asarray(fn(*xx), dtype=np.float64)
        return cls(grid, np.broadcast_to(sl, grid.shape).copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def slice_means(self) -> np.ndarray:
        return self.data.mean(axis=(1, 2, 3))

    def integral(self) -> np.ndarray:
        """Per-slice lattice quadrature, sum * h^3."""
        return self.data.sum(axis=(1, 2, 3)) * self.grid.cell_volume

    def __add__(self, other):
        return ScalarField(self.grid, self.data + _raw(other), check=False)

    def __sub__(self, other):
        return ScalarField(self.grid, self.data - _raw(other), check=False)

    def __mul__(self, other):
        return ScalarField(self.grid, self.data * _raw(other), check=False)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.data, check=False)


def _raw(x):
    return x.data if isinstance(x, ScalarField) else x


class VectorField:
    """Three scalar components on a shared grid."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components):
        if len(components) != 3:
            raise ConfigError("VectorField needs exactly 3 components")
        comps = []
        for c in components:
            if isinstance(c, ScalarField):
                if not c.grid.same_as(grid):
                    raise ConfigError("component grid mismatch")
                comps.append(c)
            else:
                comps.append(ScalarField(grid, c))
        self.grid = grid
        self.components = tuple(comps)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, [ScalarField.zeros(grid) for _ in range(3)])

    @classmethod
    def from_arrays(cls, grid, a1, a2, a3):
        return cls(grid, [a1, a2, a3])

    @classmethod
    def from_function(cls, grid, fn, time_dependent=False):
        xx = grid.coords()
        comps = [np.empty(grid.shape) for _ in range(3)]
        if time_dependent:
            for it, t in enumerate(grid.times()):
                vals = fn(*xx, t)
                for a in range(3):
                    comps[a][it] = vals[a]
        else:
            vals = fn(*xx)
            for a in range(3):
                comps[a][:] = np.broadcast_to(vals[a], grid.shape)
        return cls(grid, comps)

    def stacked(self) -> np.ndarray:
        """View-free copy shaped (3, t, x1, x2, x3)."""
        return np.stack([c.data for c in self.components])

    def max_abs(self) -> float:
        m = 0.0
        sq = None
        for c in self.components:
            sq = c.data ** 2 if sq is None else sq + c.data ** 2
        if sq is not None and sq.size:
            m = float(np.sqrt(sq.max()))
        return m

    def dot(self, other: "VectorField") -> ScalarField:
        acc = np.zeros(self.grid.shape)
        for a in range(3):
            acc += self.components[a].data * other.components[a].data
        return ScalarField(self.grid, acc, check=False)

    def __add__(self, other):
        return VectorField(self.grid, [self.components[a] + other.components[a] for a in range(3)])

    def __sub__(self, other):
        return VectorField(self.grid, [self.components[a] - other.components[a] for a in range(3)])

    def __mul__(self, s):
        return VectorField(self.grid, [c * s for c in self.components])

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, [-c for c in self.components])


# Upper-triangle component order for symmetric 3x3 tensors.
SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_SYM_POS = {(0, 0): 0, (0, 1): 1, (0, 2): 2, (1, 1): 3, (1, 2): 4, (2, 2): 5,
            (1, 0): 1, (2, 0): 2, (2, 1): 4}


class SymTensorField:
    """Symmetric 3x3 tensor field, six components in order 11,12,13,22,23,33."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components):
        if len(components) != 6:
            raise ConfigError("SymTensorField needs exactly 6 components")
        comps = []
        for c in components:
            comps.append(c if isinstance(c, ScalarField) else ScalarField(grid, c))
        self.grid = grid
        self.components = tuple(comps)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, [ScalarField.zeros(grid) for _ in range(6)])

    def entry(self, i, j) -> ScalarField:
        return self.components[_SYM_POS[(i, j)]]

    def trace(self) -> ScalarField:
        g = self.grid
        return ScalarField(g, self.components[0].data + self.components[3].data
                           + self.components[5].data, check=False)

    def apply(self, v: VectorField) -> VectorField:
        """Pointwise matrix-vector product S v."""
        out = [np.zeros(self.grid.shape) for _ in range(3)]
        for i in range(3):
            for j in range(3):
                out[i] += self.entry(i, j).data * v.components[j].data
        return VectorField(self.grid, out)

    def max_abs(self) -> float:
        """Sup over points of the Frobenius norm (off-diagonals doubled)."""
        sq = np.zeros(self.grid.shape)
        for pos, (i, j) in enumerate(SYM_INDEX):
            w = 1.0 if i == j else 2.0
            sq += w * self.components[pos].data ** 2
        return float(np.sqrt(sq.max())) if sq.size else 0.0

    def __add__(self, other):
        return SymTensorField(self.grid, [self.components[a] + other.components[a] for a in range(6)])

    def __sub__(self, other):
        return SymTensorField(self.grid, [self.components[a] - other.components[a] for a in range(6)])

    def __mul__(self, s):
        return SymTensorField(self.grid, [c * s for c in self.components])

    __rmul__ = __mul__

    def __neg__(self):
        return SymTensorField(self.grid, [-c for c in self.components])


def outer_sym(v: VectorField, w: VectorField) -> SymTensorField:
    """v (x) w + w (x) v as a symmetric tensor field."""
    comps = []
    for (i, j) in SYM_INDEX:
        comps.append(v.components[i].data * w.components[j].data
                     + v.components[j].data * w.components[i].data)
    return SymTensorField(v.grid, comps)


def self_outer(v: VectorField) -> SymTensorField:
    comps = []
    for (i, j) in SYM_INDEX:
        comps.append(v.components[i].data * v.components[j].data)
    return SymTensorField(v.grid, comps)


def rank_one(grid: Grid, scalar: ScalarField, zeta) -> SymTensorField:
    """scalar * zeta (x) zeta for a constant unit vector zeta."""
    z = np.asarray(zeta, dtype=np.float64)
    comps = [scalar.data * (z[i] * z[j]) for (i, j) in SYM_INDEX]
    return SymTensorField(grid, comps)


class SupportBox:
    """Ball-shaped support marker, kept strictly inside the periodic box.

    The 4h buffer guarantees that "compactly supported inside the box" is
    meaningful: fields may grow by a mollification radius or a placement
    offset without wrapping around.
    """

    __slots__ = ("center", "radius")

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ConfigError("SupportBox radius must be positive")

    def validate(self, grid: Grid, buffer_cells=4):
        limit = grid.box_len / 2.0 - buffer_cells * grid.h
        if self.radius >= limit:
            raise ConfigError(
                f"SupportBox radius {self.radius:g} >= box_len/2 - {buffer_cells}h = {limit:g}")
        return self

    def dilate(self, margin):
        return SupportBox(self.center, self.radius + margin)

    def mask(self, grid: Grid) -> np.ndarray:
        """Boolean (n,n,n) array: points inside the ball."""
        x1, x2, x3 = grid.coords()
        r2 = ((x1 - self.center[0]) ** 2 + (x2 - self.center[1]) ** 2
              + (x3 - self.center[2]) ** 2)
        return r2 <= self.radius ** 2

    def tail_sup(self, field) -> float:
        """Sup of |field| outside the ball (0 if the ball covers the box)."""
        outside = ~self.mask(field.grid)
        if not outside.any():
            return 0.0
        if isinstance(field, ScalarField):
            return float(np.abs(field.data[:, outside]).max())
        if isinstance(field, VectorField):
            sq = sum(c.data[:, outside] ** 2 for c in field.components)
            return float(np.sqrt(sq.max()))
        if isinstance(field, SymTensorField):
            sq = None
            for pos, (i, j) in enumerate(SYM_INDEX):
                w = 1.0 if i == j else 2.0
                term = w * field.components[pos].data[:, outside] ** 2
                sq = term if sq is None else sq + term
            return float(np.sqrt(sq.max()))
        raise TypeError(type(field))


class MapField:
    """Time-sliced map of the box, stored as displacement from identity."""

    __slots__ = ("grid", "displacement")

    def __init__(self, grid: Grid, displacement: VectorField, check_wrap=True):
        if not displacement.grid.same_as(grid):
            raise ConfigError("displacement grid mismatch")
        if check_wrap:
            m = displacement.max_abs()
            if m >= grid.box_len / 4.0:
                raise ConfigError(
                    f"displacement sup {m:g} >= box_len/4; wrap-around would be ambiguous")
        self.grid = grid
        self.displacement = displacement

    @classmethod
    def identity(cls, grid):
        return cls(grid, VectorField.zeros(grid), check_wrap=False)

    def is_identity(self) -> bool:
        return all(not c.data.any() for c in self.displacement.components)

    def positions(self, t_index) -> np.ndarray:
        """Mapped positions of the lattice at one slice, shape (3, n^3)."""
        xx = self.grid.coords()
        return np.stack([
            (xx[a] + self.displacement.components[a].data[t_index]).ravel()
            for a in range(3)
        ])

    def translation_vector(self):
        """If the map is a constant translation, return it, else None."""
        vec = []
        for c in self.displacement.components:
            v = c.data.flat[0]
            if not np.allclose(c.data, v, rtol=0.0, atol=0.0):
                return None
            vec.append(v)
        return np.array(vec)
