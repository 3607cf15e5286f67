"""Nonlocal operators: inverse divergence, inverse curl, conserved
functionals and Killing-field compatibility moments.

All solves are spectral on the buffered torus; sources must be mean-free
per slice because the zero mode has no preimage.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .errors import MeanNotZero, NotSolenoidal, SupportViolation
from .fields import Grid, ScalarField, SupportBox, SymTensorField, VectorField, SYM_INDEX
from .parallel import fft_workers
from . import spectral


def _check_mean_free(v: VectorField, mean_tol):
    sup = v.max_abs()
    worst = max(float(np.abs(c.slice_means()).max()) for c in v.components)
    if worst > mean_tol * max(sup, 1e-300):
        raise MeanNotZero(
            f"component slice mean {worst:.3e} exceeds {mean_tol:g} * sup = "
            f"{mean_tol * sup:.3e}")


def inverse_divergence(f: VectorField, mean_tol=1e-8) -> SymTensorField:
    """Symmetric S with Div S = f, the order (-1) spectral solution.

    S_ij = invlap(d_i f_j + d_j f_i) - delta_ij invlap(div f).
    """
    _check_mean_free(f, mean_tol)
    g = f.grid
    k = spectral._deriv_wavenumbers(g)
    ks = spectral._ksq(g)
    ks[0, 0, 0, 0] = 1.0
    spec = [spectral._rfft(c.data) for c in f.components]
    divhat = k[0] * spec[0] + k[1] * spec[1] + k[2] * spec[2]  # div/i
    comps = []
    for (i, j) in SYM_INDEX:
        num = 1j * (k[i] * spec[j] + k[j] * spec[i])
        if i == j:
            num = num - 1j * divhat
        sol = num / (-ks)
        sol[:, 0, 0, 0] = 0.0
        comps.append(spectral._irfft(sol, g.n_space))
    return SymTensorField(g, comps)


def curl_inverse(B: VectorField, mean_tol=1e-8, div_tol=1e-8) -> VectorField:
    """Zero-mean divergence-free A with curl A = B (B must be solenoidal)."""
    _check_mean_free(B, mean_tol)
    sup = B.max_abs()
    ddef = spectral.div(B).max_abs()
    if ddef > div_tol * max(sup, 1e-300):
        raise NotSolenoidal(f"div defect {ddef:.3e} exceeds {div_tol:g} * sup")
    g = B.grid
    k = spectral._deriv_wavenumbers(g)
    ks = spectral._ksq(g)
    ks[0, 0, 0, 0] = 1.0
    s = [spectral._rfft(c.data) for c in B.components]
    curl_hat = [1j * (k[1] * s[2] - k[2] * s[1]),
                1j * (k[2] * s[0] - k[0] * s[2]),
                1j * (k[0] * s[1] - k[1] * s[0])]
    comps = []
    for ch in curl_hat:
        sol = ch / ks
        sol[:, 0, 0, 0] = 0.0
        comps.append(spectral._irfft(sol, g.n_space))
    return VectorField(g, comps)


def total_energy(v: VectorField, B: VectorField) -> np.ndarray:
    return (v.dot(v) + B.dot(B)).integral()


def cross_helicity(v: VectorField, B: VectorField) -> np.ndarray:
    return v.dot(B).integral()


def magnetic_helicity(B: VectorField, mean_tol=1e-8, div_tol=1e-8) -> np.ndarray:
    A = curl_inverse(B, mean_tol=mean_tol, div_tol=div_tol)
    return A.dot(B).integral()


class KillingBasis:
    """The six generators of rigid motions, sampled on one spatial slice.

    Translations e_1..e_3 and rotations xi_i(x) = e_i x (x - box_center).
    The rotational fields are exact kernel elements of the symmetric
    gradient; this is verified spectrally on the buffered region.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        x1, x2, x3 = grid.coords()
        c = grid.center
        r = (x1 - c[0], x2 - c[1], x3 - c[2])
        zero = np.zeros_like(x1)
        one = np.ones_like(x1)
        # e_i x r, component-wise
        self.rotations = (
            (zero, -r[2], r[1]),
            (r[2], zero, -r[0]),
            (-r[1], r[0], zero),
        )
        self.one = one

    def moments(self, f: VectorField) -> np.ndarray:
        """(n_time, 6): translational then rotational integrals of f . xi."""
        g = self.grid
        out = np.empty((g.n_time, 6))
        vol = g.cell_volume
        for a in range(3):
            out[:, a] = f.components[a].data.sum(axis=(1, 2, 3)) * vol
        for i in range(3):
            acc = np.zeros(g.n_time)
            for a in range(3):
                rot = self.rotations[i][a]
                if rot is not None:
                    acc += (f.components[a].data * rot).sum(axis=(1, 2, 3)) * vol
            out[:, 3 + i] = acc
        return out

    def symmetric_gradient_defect(self, inside: SupportBox) -> float:
        """Killing-property defect of the six generators, in integral form.

        The generators are kernel elements of the symmetric gradient, which
        operationally means the moments of Div S vanish for any symmetric S
        supported in the buffered region (integration by parts leaves no
        boundary term).  Checked against a deterministic battery of smooth
        localized tensors; the pointwise spectral gradient cannot be used
        because the rotational generators are sawtooth fields on the torus.
        """
        from .fields import SymTensorField
        g = self.grid
        x1, x2, x3 = g.coords()
        c = inside.center
        r2 = ((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2)
        env = np.exp(-(r2 / inside.radius ** 2) ** 2)
        waves = (np.sin(x1 + 2 * x2), np.cos(x2 - x3), np.sin(x3) * np.cos(x1))
        worst = 0.0
        for w in waves:
            sl = np.broadcast_to(env * w, g.shape).copy()
            comps = [sl, 0.3 * sl, -0.2 * sl, 0.7 * sl, 0.1 * sl, -0.5 * sl]
            S = SymTensorField(g, comps)
            f = spectral.div_tensor(S)
            mom = self.moments(f)
            scale = max(float(np.abs(sl).max()), 1e-300) * g.box_len ** 3
            worst = max(worst, float(np.abs(mom).max()) / scale)
        return worst


def killing_moments(f: VectorField, support: SupportBox | None = None,
                    support_tol=1e-8, basis: KillingBasis | None = None) -> np.ndarray:
    """Six compatibility integrals per slice; translations first.

    When a support box is given, f must be negligible outside it (the
    rotational generators grow linearly, so tails would corrupt the
    moments silently otherwise).
    """
    if support is not None:
        tail = support.tail_sup(f)
        sup = f.max_abs()
        if tail > support_tol * max(sup, 1e-300):
            raise SupportViolation(
                f"field tail {tail:.3e} outside support exceeds {support_tol:g} * sup")
    if basis is None:
        basis = KillingBasis(f.grid)
    return basis.moments(f)
