"""Pseudo-spectral calculus on the periodic lattice.

Spatial derivatives are exact for the trigonometric interpolant of the
samples; time derivatives use central differences (second order one-sided
at the endpoints).  All routines are pure and slice-vectorized.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .errors import MeanNotZero
from .fields import Grid, ScalarField, SymTensorField, VectorField
from .parallel import fft_workers

_SPATIAL_AXES = (1, 2, 3)


def _rfft(data):
    return sfft.rfftn(data, axes=_SPATIAL_AXES, workers=fft_workers())


def _irfft(spec, n):
    return sfft.irfftn(spec, s=(n, n, n), axes=_SPATIAL_AXES, workers=fft_workers())


def _deriv_wavenumbers(grid: Grid):
    """ik multipliers for first derivatives; Nyquist modes zeroed (odd symmetry)."""
    k = grid.wavenumbers()
    k[grid.n_space // 2] = 0.0
    kr = k[: grid.n_space // 2 + 1].copy()
    kr[-1] = 0.0
    return (k.reshape(1, -1, 1, 1), k.reshape(1, 1, -1, 1), kr.reshape(1, 1, 1, -1))


def _ksq(grid: Grid):
    k = grid.wavenumbers()
    kr = np.abs(k[: grid.n_space // 2 + 1])
    k1 = (k ** 2).reshape(1, -1, 1, 1)
    k2 = (k ** 2).reshape(1, 1, -1, 1)
    k3 = (kr ** 2).reshape(1, 1, 1, -1)
    return k1 + k2 + k3


def deriv(f: ScalarField, axis: int) -> ScalarField:
    """Exact derivative of the trigonometric interpolant along axis 1, 2 or 3."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    g = f.grid
    kk = _deriv_wavenumbers(g)[axis - 1]
    out = _irfft(1j * kk * _rfft(f.data), g.n_space)
    return ScalarField(g, out, check=False)


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    spec = _rfft(f.data)
    comps = [_irfft(1j * kk * spec, g.n_space) for kk in _deriv_wavenumbers(g)]
    return VectorField(g, comps)


def div(v: VectorField) -> ScalarField:
    g = v.grid
    acc = None
    for comp, kk in zip(v.components, _deriv_wavenumbers(g)):
        term = 1j * kk * _rfft(comp.data)
        acc = term if acc is None else acc + term
    return ScalarField(g, _irfft(acc, g.n_space), check=False)


def curl(v: VectorField) -> VectorField:
    g = v.grid
    k1, k2, k3 = _deriv_wavenumbers(g)
    s = [_rfft(c.data) for c in v.components]
    c1 = _irfft(1j * (k2 * s[2] - k3 * s[1]), g.n_space)
    c2 = _irfft(1j * (k3 * s[0] - k1 * s[2]), g.n_space)
    c3 = _irfft(1j * (k1 * s[1] - k2 * s[0]), g.n_space)
    return VectorField(g, [c1, c2, c3])


def div_tensor(S: SymTensorField) -> VectorField:
    """Row divergence (Div S)_i = d_j S_ij."""
    g = S.grid
    k = _deriv_wavenumbers(g)
    out = []
    for i in range(3):
        acc = None
        for j in range(3):
            term = 1j * k[j] * _rfft(S.entry(i, j).data)
            acc = term if acc is None else acc + term
        out.append(_irfft(acc, g.n_space))
    return VectorField(g, out)


def grad_vector(v: VectorField):
    """All nine first derivatives, as arrays[i][j] = d_j v_i."""
    g = v.grid
    k = _deriv_wavenumbers(g)
    rows = []
    for i in range(3):
        spec = _rfft(v.components[i].data)
        rows.append([_irfft(1j * k[j] * spec, g.n_space) for j in range(3)])
    return rows


def laplacian(f):
    if isinstance(f, VectorField):
        return VectorField(f.grid, [laplacian(c) for c in f.components])
    g = f.grid
    out = _irfft(-_ksq(g) * _rfft(f.data), g.n_space)
    return ScalarField(g, out, check=False)


def inv_laplacian(f: ScalarField, mean_tol=1e-12) -> ScalarField:
    """Zero-mean g with laplacian(g) = f, to spectral precision.

    Each time slice must be mean-free: the zero mode has no preimage.
    mean_tol is relative to sup|f|.
    """
    g = f.grid
    sup = f.max_abs()
    means = np.abs(f.slice_means())
    if np.any(means > mean_tol * max(sup, 1e-300)):
        raise MeanNotZero(
            f"slice mean {means.max():.3e} exceeds {mean_tol:g} * sup|f| = {mean_tol * sup:.3e}")
    ks = _ksq(g)
    ks[0, 0, 0, 0] = 1.0
    spec = _rfft(f.data) / (-ks)
    spec[:, 0, 0, 0] = 0.0
    return ScalarField(g, _irfft(spec, g.n_space), check=False)


def leray_project(v: VectorField) -> VectorField:
    """Remove the gradient part of v (keeps the mean untouched)."""
    g = v.grid
    k1, k2, k3 = _deriv_wavenumbers(g)
    ks = k1 ** 2 + k2 ** 2 + k3 ** 2
    ks[ks == 0.0] = 1.0  # mean and pure-Nyquist modes pass through
    s = [_rfft(c.data) for c in v.components]
    kdot = k1 * s[0] + k2 * s[1] + k3 * s[2]
    out = []
    for kk, sp in zip((k1, k2, k3), s):
        out.append(_irfft(sp - kk * kdot / ks, g.n_space))
    return VectorField(g, out)


def resample(f, n_new: int):
    """Spectral resampling of a field onto n_new points per axis."""
    if isinstance(f, VectorField):
        return VectorField(Grid(n_new, f.grid.n_time, f.grid.box_len, f.grid.t_final),
                           [resample(c, n_new).data for c in f.components])
    if isinstance(f, SymTensorField):
        g2 = Grid(n_new, f.grid.n_time, f.grid.box_len, f.grid.t_final)
        return SymTensorField(g2, [resample(c, n_new).data for c in f.components])
    g = f.grid
    g2 = Grid(n_new, g.n_time, g.box_len, g.t_final)
    spec = sfft.fftn(f.data, axes=_SPATIAL_AXES, workers=fft_workers())
    big = np.zeros((g.n_time, n_new, n_new, n_new), dtype=complex)
    m = min(g.n_space, n_new) // 2
    sl = (slice(0, m), slice(-m, None))
    for a in sl:
        for b in sl:
            for c in sl:
                big[:, a, b, c] = spec[:, a, b, c]
    out = sfft.ifftn(big, axes=_SPATIAL_AXES, workers=fft_workers()).real
    out *= (n_new / g.n_space) ** 3
    return ScalarField(g2, out, check=False)


def time_deriv_array(data: np.ndarray, dt: float) -> np.ndarray:
    """Central differences along axis 0; one-sided second order at the ends."""
    out = np.empty_like(data)
    if data.shape[0] == 2:
        out[0] = out[1] = (data[1] - data[0]) / dt
        return out
    out[1:-1] = (data[2:] - data[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * data[0] + 4.0 * data[1] - data[2]) / (2.0 * dt)
    out[-1] = (3.0 * data[-1] - 4.0 * data[-2] + data[-3]) / (2.0 * dt)
    return out


def time_deriv(f):
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, time_deriv_array(f.data, f.grid.dt), check=False)
    if isinstance(f, VectorField):
        return VectorField(f.grid, [time_deriv(c) for c in f.components])
    if isinstance(f, SymTensorField):
        return SymTensorField(f.grid, [time_deriv(c) for c in f.components])
    raise TypeError(type(f))


def _scalar_norms(f: ScalarField, max_order: int) -> dict:
    """Sup norms of f and its derivatives through max_order.

    Spatial derivatives spectral, time derivatives finite differences;
    order N is the max over space-time multi-indices of total order N.
    These lattice estimates stand in for the C^N norms.
    """
    g = f.grid
    report = {0: f.max_abs()}
    if max_order == 0:
        return report
    firsts = [deriv(f, a) for a in (1, 2, 3)]
    firsts.append(ScalarField(g, time_deriv_array(f.data, g.dt), check=False))
    report[1] = max(d.max_abs() for d in firsts)
    if max_order == 1:
        return report
    second = 0.0
    for a, d in enumerate(firsts):
        for b in range(min(a, 3), 3):
            second = max(second, deriv(d, b + 1).max_abs())
        second = max(second, float(np.max(np.abs(time_deriv_array(d.data, g.dt)))))
    report[2] = float(second)
    if max_order > 2:
        raise ValueError("norm_report supports orders up to 2")
    return report


def norm_report(f, max_order=2) -> dict:
    if isinstance(f, ScalarField):
        return _scalar_norms(f, max_order)
    per = [_scalar_norms(c, max_order) for c in f.components]
    return {k: max(p[k] for p in per) for k in per[0]}
