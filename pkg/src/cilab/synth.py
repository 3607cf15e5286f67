"""Synthetic fields: benchmark flows, compactly supported solenoidal
presets, bumps, and band-limited noise for tests and verification runs.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .fields import Grid, ScalarField, SupportBox, VectorField
from . import spectral


def abc_field(grid: Grid, A=1.0, B=1.0, C=1.0, phase_shift=0.0) -> VectorField:
    """The classical periodic Beltrami benchmark: curl of it equals itself
    for unit coefficients (wavenumber one on a 2 pi box)."""
    scale = 2.0 * np.pi / grid.box_len

    def fn(x1, x2, x3):
        s1, s2, s3 = scale * x1 + phase_shift, scale * x2 + phase_shift, scale * x3 + phase_shift
        return (A * np.sin(s3) + C * np.cos(s2),
                B * np.sin(s1) + A * np.cos(s3),
                C * np.sin(s2) + B * np.cos(s1))

    return VectorField.from_function(grid, fn)


def smooth_step(r):
    """C^3 ramp: 1 for r <= 0, 0 for r >= 1 (seventh-order polynomial)."""
    r = np.clip(np.asarray(r, dtype=np.float64), 0.0, 1.0)
    return 1.0 - r ** 4 * (35.0 - 84.0 * r + 70.0 * r ** 2 - 20.0 * r ** 3)


def radial_bump(grid: Grid, center, r_inner, r_outer) -> ScalarField:
    """1 inside r_inner, smooth decay to exact 0 at r_outer."""
    if r_outer <= r_inner:
        raise ConfigError("r_outer must exceed r_inner")
    x1, x2, x3 = grid.coords()
    c = np.asarray(center, dtype=np.float64)
    r = np.sqrt((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2)
    prof = smooth_step((r - r_inner) / (r_outer - r_inner))
    return ScalarField(grid, np.broadcast_to(prof, grid.shape).copy())


def plateau_cutoff(grid: Grid, box: SupportBox, rim_fraction=0.25) -> ScalarField:
    """Cutoff that is 1 on the box and supported in its dilation."""
    r0 = box.radius
    return radial_bump(grid, box.center, r0, r0 * (1.0 + rim_fraction))


def supported_solenoidal(grid: Grid, center, radius, kind="abc", amplitude=1.0,
                         windings=1.0) -> VectorField:
    """Divergence-free field compactly supported in a ball.

    Constructed as curl(bump * potential), hence exactly solenoidal for
    the trigonometric interpolant.  kind="abc" swirls like the Beltrami
    benchmark inside the plateau; kind="bump-torus" nests toroidal loops.
    """
    bump = radial_bump(grid, center, 0.25 * radius, 0.95 * radius)
    if kind == "abc":
        base = abc_field(grid, A=amplitude, B=amplitude, C=amplitude)
        pot = VectorField(grid, [bump * c for c in base.components])
    elif kind == "bump-torus":
        x1, x2, x3 = grid.coords()
        c = np.asarray(center, dtype=np.float64)
        z = amplitude * np.sin(windings * np.pi * (x3 - c[2]) / max(radius, 1e-12))
        comp3 = ScalarField(grid, np.broadcast_to(z, grid.shape).copy())
        pot = VectorField(grid, [ScalarField.zeros(grid), ScalarField.zeros(grid),
                                 bump * comp3])
    else:
        raise ConfigError(f"unknown solenoidal preset {kind!r}")
    return spectral.curl(pot)


def scaled_copy(field: VectorField, factor_amp, factor_len, center) -> VectorField:
    """amplitude * field(center + factor_len (x - center)), sampled analytically
    through the spectral interpolant is avoided: the copy is evaluated by
    resampling the closed-form argument on the lattice via tricubic splines."""
    from .sampling import VectorSampler
    g = field.grid
    c = np.asarray(center, dtype=np.float64)
    x1, x2, x3 = g.coords()
    pts = np.stack([
        (c[0] + factor_len * (x1 - c[0])).ravel(),
        (c[1] + factor_len * (x2 - c[1])).ravel(),
        (c[2] + factor_len * (x3 - c[2])).ravel(),
    ])
    sampler = VectorSampler(field, mode="cubic", refine=2)
    comps = [np.empty(g.shape) for _ in range(3)]
    for it in range(g.n_time):
        vals = sampler.eval(pts, it)
        for a in range(3):
            comps[a][it] = factor_amp * vals[a].reshape(g.shape[1:])
    return VectorField(g, comps)


def random_band_limited(grid: Grid, kmax, rng, amplitude=1.0,
                        time_dependent=False) -> ScalarField:
    """Random real field with spectrum supported in |k_i| <= kmax."""
    n = grid.n_space
    kmax = int(kmax)
    if kmax >= n // 2:
        raise ConfigError("kmax must stay below Nyquist")
    nt = grid.n_time if time_dependent else 1
    spec = np.zeros((nt, n, n, n), dtype=complex)
    idx = list(range(-kmax, kmax + 1))
    for it in range(nt):
        for a in idx:
            for b in idx:
                for c in idx:
                    spec[it, a, b, c] = rng.normal() + 1j * rng.normal()
    data = np.fft.ifftn(spec, axes=(1, 2, 3)).real
    data *= amplitude / max(np.abs(data).max(), 1e-300)
    if not time_dependent:
        data = np.broadcast_to(data[0], grid.shape).copy()
    return ScalarField(grid, data)


def random_vector(grid: Grid, kmax, rng, amplitude=1.0, solenoidal=False,
                  mean_free=False, time_dependent=False) -> VectorField:
    comps = [random_band_limited(grid, kmax, rng, amplitude, time_dependent)
             for _ in range(3)]
    v = VectorField(grid, comps)
    if solenoidal:
        v = spectral.leray_project(v)
    if mean_free:
        comps = []
        for c in v.components:
            means = c.data.mean(axis=(1, 2, 3), keepdims=True)
            comps.append(c.data - means)
        v = VectorField(grid, comps)
    return v
