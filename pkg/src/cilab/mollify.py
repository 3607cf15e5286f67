"""Space-time mollification.

Kernel: the polynomial bump (1 - |y|^2)^4 on the unit ball of R^4,
anisotropically scaled to radius `scale` in space and `scale_t` in time,
sampled on lattice offsets and normalized to unit discrete mass (so
constants are reproduced exactly).  Space is periodic; time is extended
by even reflection at t=0 and t=T.  Spatial convolution runs in Fourier
space per time offset, the small time sum is direct; the output is masked
by the exactly dilated support so compact supports stay compact despite
FFT roundoff.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .errors import ScaleUnresolved
from .fields import Grid, ScalarField
from .parallel import fft_workers


def _kernel_samples(grid: Grid, scale, scale_t, d_dt=False):
    """(weights, support indicator, dt offsets); weights normalized to the
    mollifier's discrete mass (the derivative kernel shares that mass)."""
    kx = int(np.floor(scale / grid.h))
    kt = int(np.floor(scale_t / grid.dt))
    ox = np.arange(-kx, kx + 1) * grid.h
    ot = np.arange(-kt, kt + 1) * grid.dt
    dx1, dx2, dx3 = np.meshgrid(ox, ox, ox, indexing="ij")
    rr = (dx1 ** 2 + dx2 ** 2 + dx3 ** 2) / scale ** 2
    w = np.empty((ot.size,) + dx1.shape)
    wd = np.empty_like(w) if d_dt else None
    for i, dt in enumerate(ot):
        u2 = rr + (dt / scale_t) ** 2
        core = np.clip(1.0 - u2, 0.0, None)
        w[i] = core ** 4
        if d_dt:
            wd[i] = 4.0 * core ** 3 * (-2.0 * dt / scale_t ** 2)
    total = w.sum()
    if total <= 0:
        raise ScaleUnresolved("mollifier kernel has no interior lattice point")
    cover = (w > 0.0).astype(np.float64)
    out = wd if d_dt else w
    out = out / total
    return out, cover, np.arange(-kt, kt + 1)


def _reflect_index(j: int, n_time: int) -> int:
    # even reflection about both endpoints of the slice index range
    period = 2 * (n_time - 1)
    j = j % period
    return j if j < n_time else period - j


def _wrap_kernel_hat(w3, n):
    """Periodically wrap a centered (2k+1)^3 stencil and transform it."""
    kx = (w3.shape[0] - 1) // 2
    full = np.zeros((n, n, n))
    idx = np.arange(-kx, kx + 1) % n
    for a in range(-kx, kx + 1):
        for b in range(-kx, kx + 1):
            np.add.at(full[a % n, b % n], idx, w3[a + kx, b + kx, :])
    return sfft.rfftn(full, workers=fft_workers())


def _convolve(f: ScalarField, scale, scale_t, d_dt):
    g = f.grid
    if scale < 2.0 * g.h or scale_t < 2.0 * g.dt:
        raise ScaleUnresolved(
            f"mollifier radius ({scale:g}, {scale_t:g}) under twice the spacing "
            f"({g.h:g}, {g.dt:g})")
    w, cover, dts = _kernel_samples(g, scale, scale_t, d_dt=d_dt)
    n = g.n_space
    kx = (w.shape[1] - 1) // 2
    if 2 * kx + 1 > n:
        raise ScaleUnresolved("mollifier kernel wider than the periodic box")
    kern_hat = [_wrap_kernel_hat(w[i], n) for i in range(w.shape[0])]
    cover_hat = [_wrap_kernel_hat(cover[i], n) for i in range(w.shape[0])]
    f_hat = [sfft.rfftn(f.data[it], workers=fft_workers()) for it in range(g.n_time)]
    indicator = (f.data != 0.0).astype(np.float64)
    ind_hat = [sfft.rfftn(indicator[it], workers=fft_workers())
               for it in range(g.n_time)]
    out = np.empty(g.shape)
    for it in range(g.n_time):
        acc = None
        cov = None
        for i, dt in enumerate(dts):
            src = _reflect_index(it - int(dt), g.n_time)
            term = f_hat[src] * kern_hat[i]
            cterm = ind_hat[src] * cover_hat[i]
            acc = term if acc is None else acc + term
            cov = cterm if cov is None else cov + cterm
        sl = sfft.irfftn(acc, s=(n, n, n), workers=fft_workers())
        cv = sfft.irfftn(cov, s=(n, n, n), workers=fft_workers())
        sl[cv <= 0.5] = 0.0
        out[it] = sl
    return ScalarField(g, out, check=False)


def mollify_in_spacetime(f: ScalarField, scale, scale_t=None) -> ScalarField:
    """Convolve with the unit-mass bump of radius `scale` (space) x
    `scale_t` (time).  Requires scale >= 2h and scale_t >= 2 dt; support
    grows by at most the kernel radius.
    """
    if scale_t is None:
        scale_t = scale
    return _convolve(f, float(scale), float(scale_t), d_dt=False)


def mollified_time_deriv(f: ScalarField, scale, scale_t=None) -> ScalarField:
    """Time derivative of the mollification, via the analytic kernel
    derivative; shares the normalization of mollify_in_spacetime, so it is
    that output's exact t-derivative away from the reflection boundary."""
    if scale_t is None:
        scale_t = scale
    return _convolve(f, float(scale), float(scale_t), d_dt=True)
