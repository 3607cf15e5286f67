"""Maps of the box: composition, Jacobians, inversion, pushforward and
the volume-correcting flow.

Maps are stored as displacement from identity; compositions evaluate the
outer displacement at the inner map's positions by interpolation.  The
fixed-point inverter consumes an oscillatory-map description (duck typed,
see blocks.Psi0Spec) whose amplitudes it evaluates pointwise; the
iteration is independent per lattice point.
"""

from __future__ import annotations

import numpy as np

from .errors import (AmplitudeTooLarge, CertificateFail, InverseDefect,
                     MeanNotZero, NoConvergence, NotContractive)
from .fields import Grid, MapField, ScalarField, SupportBox, VectorField
from .sampling import ScalarSampler, VectorSampler
from . import spectral


class JacobianReport:
    __slots__ = ("det_field", "min_det", "max_det")

    def __init__(self, det_field: ScalarField):
        self.det_field = det_field
        self.min_det = float(det_field.data.min())
        self.max_det = float(det_field.data.max())


def deformation_gradient(m: MapField):
    """rows[i][j] = d_j(map_i) = delta_ij + d_j(displacement_i), spectral."""
    rows = spectral.grad_vector(m.displacement)
    for i in range(3):
        rows[i][i] = rows[i][i] + 1.0
    return rows


def jacobian_det(m: MapField, method="trace") -> JacobianReport:
    """Pointwise determinant of the deformation gradient.

    "trace" evaluates det(I + M) = 1 + t1 + (t1^2 - t2)/2 + (t1^3 - 3 t1 t2
    + 2 t3)/6 in the traces of the displacement gradient M; "cofactor"
    expands the 3x3 determinant directly.  The two agree to rounding and
    serve as mutual cross-checks.
    """
    rows = spectral.grad_vector(m.displacement)  # M, without the identity
    if method == "trace":
        t1 = rows[0][0] + rows[1][1] + rows[2][2]
        t2 = sum(rows[i][j] * rows[j][i] for i in range(3) for j in range(3))
        t3 = sum(rows[i][j] * rows[j][k] * rows[k][i]
                 for i in range(3) for j in range(3) for k in range(3))
        det = 1.0 + t1 + 0.5 * (t1 ** 2 - t2) + (t1 ** 3 - 3.0 * t1 * t2 + 2.0 * t3) / 6.0
    elif method == "cofactor":
        a = [[rows[i][j] + (1.0 if i == j else 0.0) for j in range(3)] for i in range(3)]
        det = (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
               - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
               + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))
    else:
        raise ValueError(f"unknown jacobian method {method!r}")
    return JacobianReport(ScalarField(m.grid, det, check=False))


def compose_field(f, m: MapField, mode="cubic", refine=2):
    """f composed with m slice-wise: (f o m)(x, t) = f(m(x, t), t)."""
    if m.is_identity():
        return f
    shift = m.translation_vector()
    g = m.grid
    if shift is not None and np.allclose(shift / g.h, np.round(shift / g.h), atol=1e-13):
        # lattice translation: cyclic shift, exact
        cells = np.round(shift / g.h).astype(int)
        return _roll_field(f, -cells)
    if isinstance(f, ScalarField):
        sampler = ScalarSampler(f, mode=mode, refine=refine if mode == "cubic" else 1)
        out = np.empty(g.shape)
        for it in range(g.n_time):
            out[it] = sampler.eval(m.positions(it), it).reshape(f.data.shape[1:])
        return ScalarField(g, out, check=False)
    if isinstance(f, VectorField):
        return VectorField(g, [compose_field(c, m, mode=mode, refine=refine) for c in f.components])
    if isinstance(f, MapField):
        return compose_map(f, m, mode=mode, refine=refine)
    raise TypeError(type(f))


def _roll_field(f, cells):
    sh = tuple(cells)
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, np.roll(f.data, sh, axis=(1, 2, 3)), check=False)
    if isinstance(f, VectorField):
        return VectorField(f.grid, [_roll_field(c, cells) for c in f.components])
    if isinstance(f, MapField):
        return MapField(f.grid, _roll_field(f.displacement, cells))
    raise TypeError(type(f))


def compose_map(outer: MapField, inner: MapField, mode="cubic", refine=2) -> MapField:
    """(outer o inner)(x) = inner(x) + d_outer(inner(x))."""
    if outer.is_identity():
        return inner
    if inner.is_identity():
        return outer
    g = inner.grid
    samplers = [ScalarSampler(c, mode=mode, refine=refine)
                for c in outer.displacement.components]
    comps = [np.empty(g.shape) for _ in range(3)]
    for it in range(g.n_time):
        pts = inner.positions(it)
        for a in range(3):
            comps[a][it] = (inner.displacement.components[a].data[it]
                            + samplers[a].eval(pts, it).reshape(g.shape[1:]))
    return MapField(g, VectorField(g, comps))


def composition_defect(m: MapField, m_inv: MapField, mode="cubic", refine=2) -> float:
    """sup |m(m_inv(x)) - x| over the lattice."""
    comp = compose_map(m, m_inv, mode=mode, refine=refine)
    return comp.displacement.max_abs()


def invert_near_identity(m: MapField, inv_tol=None, max_iter=60,
                         mode="cubic", refine=2) -> MapField:
    """Inverse of a near-identity map by pointwise Picard iteration.

    Solves v(y) = -d(y + v(y)) per slice; requires a C^1 displacement
    estimate below 1/2 so the iteration contracts.
    """
    g = m.grid
    if inv_tol is None:
        inv_tol = 1e-10 * g.box_len
    if m.is_identity():
        return MapField.identity(g)
    shift = m.translation_vector()
    if shift is not None:
        disp = VectorField.from_function(g, lambda a, b, c: (
            np.full_like(a, -shift[0]), np.full_like(a, -shift[1]),
            np.full_like(a, -shift[2])))
        return MapField(g, disp)
    d1 = spectral.norm_report(m.displacement, max_order=1)[1]
    if d1 >= 0.5:
        raise NotContractive(f"displacement C1 estimate {d1:.3g} >= 0.5")
    samplers = [ScalarSampler(c, mode=mode, refine=refine)
                for c in m.displacement.components]
    comps = [np.empty(g.shape) for _ in range(3)]
    xx = g.coords()
    base = np.stack([x.ravel() for x in xx])
    for it in range(g.n_time):
        v = np.zeros_like(base)
        for _ in range(max_iter):
            pts = base + v
            new_v = -np.stack([s.eval(pts, it) for s in samplers])
            update = float(np.max(np.abs(new_v - v)))
            v = new_v
            if update < inv_tol:
                break
        else:
            raise NoConvergence(f"inverse iteration stuck at update {update:.3e}")
        for a in range(3):
            comps[a][it] = v[a].reshape(g.shape[1:])
    return MapField(g, VectorField(g, comps))


def pushforward(B: VectorField, m: MapField, m_inv: MapField, inv_tol=None,
                cleanup=False, mode="cubic", refine=2):
    """(Dm B) o m_inv: transport of a frozen-in vector field by the map.

    m_inv must be a certified inverse; the divergence defect of the result
    is reported by the caller, with optional solenoidal cleanup re-projection
    (off by default).
    """
    g = B.grid
    if inv_tol is None:
        inv_tol = 1e-5 * g.box_len
    if m.is_identity() and m_inv.is_identity():
        return B
    defect = composition_defect(m, m_inv, mode=mode, refine=refine)
    if defect > inv_tol:
        raise InverseDefect(f"composition defect {defect:.3e} > inv_tol {inv_tol:.3e}")
    rows = deformation_gradient(m)
    pushed = [np.zeros(g.shape) for _ in range(3)]
    for i in range(3):
        acc = np.zeros(g.shape)
        for j in range(3):
            acc += rows[i][j] * B.components[j].data
        pushed[i] = acc
    F = VectorField(g, pushed)
    out = compose_field(F, m_inv, mode=mode, refine=refine)
    if cleanup:
        out = spectral.leray_project(out)
    return out


def moser_correction(f_c: ScalarField, support: SupportBox, n_s=16,
                     mean_tol=1e-8, moser_tol=1e-3, mode="cubic", refine=2):
    """Volume-correcting map with det(D phi) = 1 + f_c, by flowing the
    gradient field u = grad invlap f_c through the density interpolation.

    Returns (map, certificates).  The certificate is the sup of
    |det(D phi) - (1 + f_c)|; the flow is RK4 with n_s fixed substeps.
    """
    g = f_c.grid
    sup = f_c.max_abs()
    if sup > 0.5:
        raise AmplitudeTooLarge(f"sup|f_c| = {sup:.3g} > 1/2")
    means = np.abs(f_c.slice_means())
    if np.any(means > mean_tol * max(sup, 1e-300)):
        raise MeanNotZero(f"f_c slice mean {means.max():.3e} over tolerance")
    if sup == 0.0:
        return MapField.identity(g), {"moser_det": 0.0, "flow_condition": 0.0,
                                      "tail_outside_support": 0.0}
    u = spectral.grad(inv_laplacian_loose(f_c))
    nu = spectral.norm_report(u, max_order=1)
    nf = spectral.norm_report(f_c, max_order=1)
    flow_cond = nu[1] + nu[0] * nf[1]

    u_s = VectorSampler(u, mode=mode, refine=refine)
    f_s = ScalarSampler(f_c, mode=mode, refine=refine)
    xx = g.coords()
    base = np.stack([x.ravel() for x in xx])
    ds = 1.0 / n_s
    comps = [np.empty(g.shape) for _ in range(3)]
    for it in range(g.n_time):
        P = base.copy()

        def rhs(pts, s):
            uv = u_s.eval(pts, it)
            fv = f_s.eval(pts, it)
            return uv / (1.0 + (1.0 - s) * fv)

        s = 0.0
        for _ in range(n_s):
            k1 = rhs(P, s)
            k2 = rhs(P + 0.5 * ds * k1, s + 0.5 * ds)
            k3 = rhs(P + 0.5 * ds * k2, s + 0.5 * ds)
            k4 = rhs(P + ds * k3, s + ds)
            P = P + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += ds
        for a in range(3):
            comps[a][it] = (P[a] - base[a]).reshape(g.shape[1:])
    phi = MapField(g, VectorField(g, comps))
    det = jacobian_det(phi, method="trace").det_field
    cert = float(np.max(np.abs(det.data - (1.0 + f_c.data))))
    tail = support.dilate(2 * g.h).tail_sup(phi.displacement)
    if cert > moser_tol:
        raise CertificateFail(
            f"volume-correction certificate {cert:.3e} > moser_tol {moser_tol:.3e}")
    return phi, {"moser_det": cert, "flow_condition": float(flow_cond),
                 "tail_outside_support": tail}


def inv_laplacian_loose(f: ScalarField) -> ScalarField:
    """Spectral inverse Laplacian that silently drops the (tiny) zero mode.

    Used where the mean has already been checked against its own tolerance.
    """
    from . import spectral as sp
    ks = sp._ksq(f.grid)
    ks[0, 0, 0, 0] = 1.0
    spec = sp._rfft(f.data) / (-ks)
    spec[:, 0, 0, 0] = 0.0
    return ScalarField(f.grid, sp._irfft(spec, f.grid.n_space), check=False)


def invert_by_fixed_point(psi_spec, fp_tol=None, max_iter=200):
    """Inverse of the oscillatory auxiliary map by Banach iteration.

    psi_spec provides the amplitude/phase evaluators (see blocks.Psi0Spec).
    The iteration metric is sup|f - g| plus the amplitude-scale-weighted
    sup of the phase differences; both the final update and the inversion
    certificate sup|psi(phi(x)) - x| are returned.
    """
    g = psi_spec.grid
    if fp_tol is None:
        fp_tol = 1e-10 * g.box_len
    c_est = psi_spec.contraction_estimate()
    if c_est >= 1.0:
        raise NotContractive(
            f"estimated contraction factor {c_est:.3g} >= 1; parameters too aggressive")
    comps = [np.zeros(g.shape) for _ in range(3)]
    history = []
    cert_sup = 0.0
    for it in range(g.n_time):
        t = g.times()[it]
        pts = psi_spec.active_points(it)
        if pts is None:
            continue
        base, index = pts
        F = base.copy()
        updates = []
        for _ in range(max_iter):
            newF = base + psi_spec.t_displacement(F, t)
            D = newF - F
            d = float(np.max(np.abs(D))) if D.size else 0.0
            d += psi_spec.phase_metric(D)
            updates.append(d)
            F = newF
            if d < fp_tol:
                break
        else:
            raise NoConvergence(
                f"fixed point not converged after {max_iter} iterations (d={d:.3e})")
        res = (F + psi_spec.displacement(F, t)) - base
        rsup = float(np.max(np.abs(res))) if res.size else 0.0
        cert_sup = max(cert_sup, rsup + psi_spec.phase_metric(res))
        history.append(updates)
        disp = F - base
        for a in range(3):
            comps[a][it].flat[index] = disp[a]
    phi0 = MapField(g, VectorField(g, comps))
    ratios = []
    for upd in history:
        # measure geometric decay above the stopping noise floor only
        ratios += [upd[i + 1] / upd[i] for i in range(len(upd) - 1)
                   if upd[i] > 100.0 * fp_tol and upd[i + 1] > 0.0]
    cert = {
        "fixed_point_residual": cert_sup,
        "contraction_estimate": float(c_est),
        "iterations": max((len(u) for u in history), default=1),
        "update_ratio": float(max(ratios)) if ratios else 0.0,
    }
    return phi0, cert
