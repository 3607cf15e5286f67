"""One oscillatory transport stage: perturb a subsolution along a fixed
direction, rebuild the fields through the volume-preserving map, and
assemble the new Reynolds stress with its certificates.

The pipeline: mollify the amplitude, build the cutoff inventory, sample
the auxiliary map and invert it by fixed point, correct the volume by the
gradient flow, push the magnetic field forward, define the new velocity
from the map, split the perturbation, assemble the Reynolds pieces, and
cancel the spurious momentum with a far-away patch.
"""

from __future__ import annotations

import math

import numpy as np

from .blocks import (CutoffInventory, ParamLedger, build_cutoffs, build_psi0,
                     build_w0_wc)
from .diffeo import (compose_field, compose_map, composition_defect,
                     deformation_gradient, invert_by_fixed_point,
                     invert_near_identity, jacobian_det, moser_correction,
                     pushforward)
from .errors import (BudgetViolation, MomentResidual, PlacementOverlap,
                     SupportViolation)
from .fields import (MapField, ScalarField, SupportBox, SymTensorField,
                     VectorField, outer_sym, rank_one, self_outer)
from .mollify import mollified_time_deriv, mollify_in_spacetime
from .operators import KillingBasis, inverse_divergence, killing_moments, magnetic_helicity, total_energy, cross_helicity
from .options import StageOptions
from .sampling import VectorSampler
from .synth import radial_bump
from . import spectral


class StageOutput:
    """New subsolution fields plus every intermediate piece and certificate."""

    def __init__(self, v_new, B_new, p_new, R_new, pieces, certificates):
        self.v_new = v_new
        self.B_new = B_new
        self.p_new = p_new
        self.R_new = R_new
        self.pieces = pieces
        self.certificates = certificates


def _gamma_budget(gamma: ScalarField, ledger: ParamLedger):
    n = spectral.norm_report(gamma, max_order=1)
    value = n[0] + n[1] / ledger.lam_j
    limit = math.sqrt(ledger.delta_qp1)
    return value, limit


def assemble_sigma1(inventory: CutoffInventory, v_J: VectorField) -> VectorField:
    """Transport defect of the main perturbation against the old velocity.

    d_t w0 + v.grad w0 + (div w0) v + w0.grad v + d_t wc, with every phase
    derivative exact (affine phases) and amplitude time derivatives from
    the mollifier kernel; only v_J itself is lattice data.
    """
    g = inventory.grid
    zeta = inventory.zeta
    out = [np.zeros(g.shape) for _ in range(3)]
    slab = inventory.active_slab()
    if slab is None:
        return VectorField(g, out)
    pts, flat = inventory.active_points()
    sl = tuple(slice(lo, hi) for lo, hi in slab)
    # directional derivative of v along zeta, spectral
    dzeta_v = [np.zeros(g.shape) for _ in range(3)]
    rows = spectral.grad_vector(v_J)
    for i in range(3):
        dzeta_v[i] = zeta[0] * rows[i][0] + zeta[1] * rows[i][1] + zeta[2] * rows[i][2]
    for it in range(g.n_time):
        pack = inventory.amplitude_pack_grid(slab, it)
        v_pts = np.stack([v_J.components[a].data[(it,) + sl].reshape(-1)
                          for a in range(3)])
        res = inventory.accumulate(
            pts, it, pack["gamma"], pack["grad"],
            {"sigma1_main", "dzeta_s", "s", "dt_wc"},
            v_pts=v_pts, dt_gamma=pack["dt_gamma"], dt_grad_gamma=pack["dt_grad"])
        for a in range(3):
            vals = (res["sigma1_main"] * zeta[a]
                    + res["dzeta_s"] * v_pts[a]
                    + res["s"] * dzeta_v[a][(it,) + sl].reshape(-1)
                    + res["dt_wc"][a])
            out[a][it].flat[flat] = vals
    return VectorField(g, out)


def assemble_sigma2(inventory: CutoffInventory, gamma_mu: ScalarField,
                    w0: VectorField | None = None, method="analytic") -> VectorField:
    """Divergence of the oscillation tensor minus its intended mean.

    The tensor is (sum a_m cos theta_m)^2 zeta x zeta - gamma_mu^2 zeta x
    zeta; because the phases are constant along zeta, its divergence has no
    frequency-scale term.  The analytic route uses that cancellation
    directly (zeta-derivatives of amplitudes only); the spectral route
    differentiates the sampled tensor and is kept as a cross-check for
    fully resolved configurations.
    """
    g = inventory.grid
    zeta = inventory.zeta
    if method == "spectral":
        if w0 is None:
            raise ValueError("spectral route needs the sampled w0")
        s = sum(zeta[a] * w0.components[a].data for a in range(3))
        diff = ScalarField(g, s * s - gamma_mu.data ** 2, check=False)
        tens = rank_one(g, diff, zeta)
        return spectral.div_tensor(tens)
    out = [np.zeros(g.shape) for _ in range(3)]
    slab = inventory.active_slab()
    if slab is None:
        return VectorField(g, out)
    pts, flat = inventory.active_points()
    sl = tuple(slice(lo, hi) for lo, hi in slab)
    # zeta-derivative of gamma_mu^2, spectral
    dzeta_gamma = sum(zeta[a] * inventory.grad_gamma_mu.components[a].data
                      for a in range(3))
    for it in range(g.n_time):
        pack = inventory.amplitude_pack_grid(slab, it)
        res = inventory.accumulate(pts, it, pack["gamma"], pack["grad"],
                                   {"s", "dzeta_s"})
        gam = pack["gamma"]
        dzg = dzeta_gamma[(it,) + sl].reshape(-1)
        scal = 2.0 * res["s"] * res["dzeta_s"] - 2.0 * gam * dzg
        for a in range(3):
            out[a][it].flat[flat] = scal * zeta[a]
    return VectorField(g, out)


def oscillation_mean_identity(inventory: CutoffInventory) -> float:
    """sup |sum a_m^2 - 2 gamma_mu^2| on the amplitude support (exact partition)."""
    slab = inventory.active_slab()
    if slab is None:
        return 0.0
    pts, _ = inventory.active_points()
    sl = tuple(slice(lo, hi) for lo, hi in slab)
    worst = 0.0
    g = inventory.grid
    for it in range(g.n_time):
        pack = inventory.amplitude_pack_grid(slab, it)
        res = inventory.accumulate(pts, it, pack["gamma"], pack["grad"], {"a_sq"})
        worst = max(worst, float(np.abs(res["a_sq"] - 2.0 * pack["gamma"] ** 2).max()))
    return worst


_DIAGONAL = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)


def _placement_box(grown: SupportBox, grid, ledger: ParamLedger,
                   opts: StageOptions) -> SupportBox:
    """The momentum patch, placed past the grown support along the box
    diagonal (where a centered ball leaves the most room).

    In copy mode the patch must also hold the rescaled image of the
    perturbed region, so it is sized by the placement scale.
    """
    if opts.momentum_mode == "copy":
        radius = max(grown.radius / ledger.placement_scale, 0.1 * grown.radius)
    else:
        radius = max(0.12 * grown.radius, 5.0 * grid.h)
    offset = grown.radius + opts.placement_gap + radius
    center = grown.center + offset * _DIAGONAL
    # the patch itself must not wrap: per-coordinate extent inside the box
    extent = offset / np.sqrt(3.0) + radius
    limit = grid.box_len / 2.0 - 4.0 * grid.h
    if extent >= limit:
        raise PlacementOverlap(
            f"momentum patch at offset {offset:g} radius {radius:g} does not fit "
            f"inside the box (extent {extent:g} >= limit {limit:g})")
    return SupportBox(center, radius)


def _stage_omega1(support: SupportBox, grid, opts: StageOptions) -> SupportBox:
    return support.dilate(opts.rim_allowance * support.radius + 2 * grid.h)


def stage_support_growth(support: SupportBox, grid, ledger: ParamLedger,
                         opts: StageOptions) -> SupportBox:
    """Outer ball containing the perturbed region and the momentum patch."""
    omega1 = _stage_omega1(support, grid, opts)
    grown = omega1.dilate(1.0 / ledger.mu + 2 * grid.h)
    patch = _placement_box(grown, grid, ledger, opts)
    reach = float(np.linalg.norm(patch.center - support.center)) + patch.radius
    return SupportBox(support.center, max(grown.radius, reach))


def angular_correction(w0: VectorField, wc: VectorField, w_phi: VectorField,
                       ledger: ParamLedger, placement: SupportBox,
                       support: SupportBox, opts: StageOptions,
                       basis: KillingBasis):
    """Momentum-cancelling patch placed away from the perturbed region.

    A curl dipole -(1/2) curl(chi_L L(t)) cancels a given angular momentum
    L exactly on the lattice (x cross curl A integrates to 2 A) and its
    translational moments vanish identically, since any curl integrates to
    zero.  In "dipole" mode (default) L is the measured rotational moment
    of the whole perturbation w0 + wc + w_phi.  In "copy" mode the dipole
    carries only the explicit part and the map artifact's momentum is
    cancelled by a rescaled far copy of w_phi itself; its amplitude grows
    like the fourth power of the placement scale, which desk grids cannot
    afford energetically, hence the default.
    """
    g = w0.grid
    explicit = w0 + wc
    if opts.momentum_mode == "dipole":
        target = basis.moments(explicit + w_phi)[:, 3:6]
    else:
        target = basis.moments(explicit)[:, 3:6]
    chi_l = radial_bump(g, placement.center, 0.35 * placement.radius,
                        0.9 * placement.radius)
    chi_l = chi_l * (1.0 / float(chi_l.integral()[0]))
    comps = [np.empty(g.shape) for _ in range(3)]
    for it in range(g.n_time):
        for a in range(3):
            comps[a][it] = chi_l.data[it] * target[it, a]
    w_l = spectral.curl(VectorField(g, comps)) * (-0.5)
    info = {
        "angular_momentum_sup": float(np.abs(target).max()),
        "w_phi_truncation": 0.0,
        "w_l_sup": w_l.max_abs(),
    }
    if opts.momentum_mode == "copy":
        sigma = ledger.placement_scale
        trunc = radial_bump(g, support.center, 0.92 * support.radius,
                            support.radius)
        w_phi_trunc = VectorField(g, [
            ScalarField(g, trunc.data * c.data, check=False)
            for c in w_phi.components])
        info["w_phi_truncation"] = (w_phi - w_phi_trunc).max_abs()
        sampler = VectorSampler(w_phi_trunc, mode="cubic",
                                refine=opts.interp_refine)
        x1, x2, x3 = g.coords()
        c = support.center
        xj = placement.center
        pts = np.stack([
            (c[0] + sigma * (x1 - xj[0])).ravel(),
            (c[1] + sigma * (x2 - xj[1])).ravel(),
            (c[2] + sigma * (x3 - xj[2])).ravel(),
        ])
        comps = [np.empty(g.shape) for _ in range(3)]
        for it in range(g.n_time):
            vals = sampler.eval(np.mod(pts, g.box_len), it)
            for a in range(3):
                comps[a][it] = -(sigma ** 4) * vals[a].reshape(g.shape[1:])
        w_l = w_l + VectorField(g, comps)
        info["w_l_sup"] = w_l.max_abs()
    return w_l, info


def run_stage(sub, gamma: ScalarField, zeta, ledger: ParamLedger,
              opts: StageOptions | None = None) -> StageOutput:
    """Execute one stage on a subsolution (duck typed: .v, .B, .p, .R,
    .support).  Returns the new fields, the named pieces, and the
    certificate block; a zero amplitude reproduces the inputs exactly.
    """
    if opts is None:
        opts = StageOptions()
    tol = opts.tol
    g = gamma.grid
    v_J, B_J, p_J, R_J, support = sub.v, sub.B, sub.p, sub.R, sub.support
    zeta = np.asarray(zeta, dtype=np.float64)
    zeta = zeta / np.linalg.norm(zeta)
    certs = {}
    pieces = {}

    if gamma.max_abs() == 0.0:
        zero_v = VectorField.zeros(g)
        pieces = {name: zero_v for name in ("w0", "wc", "w_phi", "w_L", "b_new")}
        pieces["E_new"] = SymTensorField.zeros(g)
        certs["identity_stage"] = True
        return StageOutput(v_J, B_J, p_J, R_J,
                           pieces if opts.keep_pieces else {}, certs)

    # -- preconditions ------------------------------------------------------
    bud_val, bud_lim = _gamma_budget(gamma, ledger)
    certs["gamma_budget"] = bud_val
    certs["gamma_budget_limit"] = bud_lim
    if bud_val > bud_lim * (1.0 + 1e-9):
        raise BudgetViolation(
            f"amplitude budget {bud_val:.4g} exceeds delta^(1/2) = {bud_lim:.4g}")
    # the amplitude may live on the step cutoff's rim, one ladder level out
    omega1 = _stage_omega1(support, g, opts)
    tail = omega1.tail_sup(gamma)
    if tail > tol.support_tol * gamma.max_abs():
        raise SupportViolation(f"amplitude tail {tail:.3e} outside the support box")

    # -- mollified amplitude and inventory -----------------------------------
    scale_t = opts.mollify_scale_t
    if scale_t is None:
        scale_t = min(1.0 / ledger.mu, 0.45 * g.t_final)
    gamma_mu = mollify_in_spacetime(gamma, 1.0 / ledger.mu, scale_t)
    dt_gamma_mu = mollified_time_deriv(gamma, 1.0 / ledger.mu, scale_t)
    certs["mollify_gap"] = (gamma - gamma_mu).max_abs()

    inventory = build_cutoffs(ledger, gamma_mu, zeta, B_J, v_J,
                              dt_gamma_mu=dt_gamma_mu, bump_kind=opts.bump_kind,
                              bump_power=opts.bump_power)
    part_dev, chi_max, overlap = inventory.partition_deviation()
    certs.update({
        "modes": len(inventory),
        "partition_deviation": part_dev,
        "partition_global_max": chi_max,
        "overlap_max": overlap,
    })
    if len(inventory):
        certs["carrier_max"] = float(max(e.l for e in inventory.entries)
                                     * ledger.lam_jp1)
        certs["k_dot_zeta_max"] = float(max(
            abs(np.dot(e.k, zeta)) for e in inventory.entries))
        certs["k_dot_B_frozen_max"] = float(max(
            abs(np.dot(e.k, e.B_frozen)) for e in inventory.entries))
        certs["amplitude_sum_identity"] = oscillation_mean_identity(inventory)

    # -- perturbations and the auxiliary map ---------------------------------
    w0, wc, w0wc_cert = build_w0_wc(inventory)
    certs.update({f"w0_wc_{k}": v for k, v in w0wc_cert.items()})
    psi_spec, psi0 = build_psi0(inventory)
    phi0, fp_cert = invert_by_fixed_point(psi_spec, fp_tol=tol.fp_tol(g),
                                          max_iter=opts.fp_max_iter)
    certs.update({f"fp_{k}": v for k, v in fp_cert.items()})

    # -- volume correction ----------------------------------------------------
    jac_tr = jacobian_det(psi0, method="trace")
    jac_cf = jacobian_det(psi0, method="cofactor")
    certs["jacobian_trace_vs_cofactor"] = float(
        np.abs(jac_tr.det_field.data - jac_cf.det_field.data).max())
    f_c = ScalarField(g, jac_tr.det_field.data - 1.0, check=False)
    certs["f_c_sup"] = f_c.max_abs()
    certs["f_c_mean_max"] = float(np.abs(f_c.slice_means()).max())
    grown = omega1.dilate(1.0 / ledger.mu + 2 * g.h)
    # the quadrature mean of the Jacobian defect is a discretization
    # artifact (its unresolved harmonics fold onto the zero mode); it is
    # recorded above and only gates the solve at the percent level
    phi_c, moser_cert = moser_correction(
        f_c, grown, n_s=opts.n_s, mean_tol=1e-4,
        moser_tol=tol.moser_tol, refine=opts.interp_refine)
    certs.update(moser_cert)
    psi_c = invert_near_identity(phi_c, inv_tol=0.1 * tol.fp_tol(g),
                                 refine=opts.interp_refine)

    # -- the full map and its inverse ------------------------------------------
    phi_new = compose_map(phi_c, phi0, refine=opts.interp_refine)
    psi_new = _compose_psi(psi_spec, psi_c)
    certs["inverse_defect_fwd"] = composition_defect(phi_new, psi_new,
                                                     refine=opts.interp_refine)
    certs["inverse_defect_bwd"] = composition_defect(psi_new, phi_new,
                                                     refine=opts.interp_refine)
    comp_jac = jacobian_det(phi_new, method="trace")
    certs["composed_det_defect"] = float(
        np.abs(comp_jac.det_field.data - 1.0).max())
    certs["composed_det_min"] = comp_jac.min_det

    # -- new magnetic field -----------------------------------------------------
    B_new = pushforward(B_J, phi_new, psi_new, inv_tol=tol.inv_tol(g),
                        refine=opts.interp_refine)
    b_new = B_new - B_J
    h_old = magnetic_helicity(B_J, mean_tol=tol.mean_tol, div_tol=tol.div_tol)
    h_new = magnetic_helicity(B_new, mean_tol=1e-2, div_tol=1e-2)
    drift = float(np.max(np.abs(h_new - h_old) / np.maximum(np.abs(h_old), 1.0)))
    certs["helicity_before"] = float(h_old[0])
    certs["helicity_drift"] = drift
    db = spectral.div(B_new).max_abs()
    certs["div_B_new"] = db / max(spectral.norm_report(B_new, 1)[1], 1e-300)

    if opts.mode == "transport":
        pieces = {"b_new": b_new} if opts.keep_pieces else {}
        return StageOutput(v_J, B_new, p_J, R_J, pieces, certs)

    # -- new velocity -------------------------------------------------------------
    dphi_dt = spectral.time_deriv(phi_new.displacement)
    rows = deformation_gradient(phi_new)
    f_comps = []
    for i in range(3):
        acc = dphi_dt.components[i].data.copy()
        for jdx in range(3):
            acc += rows[i][jdx] * v_J.components[jdx].data
        f_comps.append(acc)
    v_new = compose_field(VectorField(g, f_comps), psi_new,
                          refine=opts.interp_refine)
    certs["div_v_new"] = (spectral.div(v_new).max_abs()
                          / max(spectral.norm_report(v_new, 1)[1], 1e-300))
    w_phi = v_new - v_J - w0 - wc
    certs["w0_sup"] = w0.max_abs()
    certs["wc_sup"] = wc.max_abs()
    certs["w_phi_sup"] = w_phi.max_abs()

    # -- Reynolds pieces -------------------------------------------------------
    sigma1 = assemble_sigma1(inventory, v_J)
    sigma2 = assemble_sigma2(inventory, gamma_mu)
    S1 = inverse_divergence(sigma1, mean_tol=1e-4)
    S2 = inverse_divergence(sigma2, mean_tol=1e-4)
    dt_w_phi = spectral.time_deriv(w_phi)
    certs["S3_source_mean"] = float(max(np.abs(c.slice_means()).max()
                                        for c in dt_w_phi.components))
    S3 = inverse_divergence(dt_w_phi, mean_tol=1e-2)
    wcp = wc + w_phi
    gamma_sq_gap = ScalarField(g, gamma_mu.data ** 2 - gamma.data ** 2, check=False)
    S4 = (outer_sym(wcp, v_new) - self_outer(wcp) - outer_sym(b_new, B_J)
          - self_outer(b_new) + rank_one(g, gamma_sq_gap, zeta))
    E = S1 + S2 + S3 + S4

    # -- momentum correction ------------------------------------------------------
    basis = KillingBasis(g)
    placement = _placement_box(grown, g, ledger, opts)
    if np.linalg.norm(placement.center - grown.center) < (
            placement.radius + grown.radius):
        raise PlacementOverlap("momentum patch overlaps the perturbed region")
    w_L, ang_info = angular_correction(w0, wc, w_phi, ledger, placement,
                                       grown, opts, basis)
    certs.update({f"angular_{k}": v for k, v in ang_info.items()})
    dt_w_L = spectral.time_deriv(w_L)
    S5 = inverse_divergence(dt_w_L, mean_tol=1e-2)
    v_final = v_new + w_L
    S6 = outer_sym(w_L, v_new) + self_outer(w_L)

    gamma_sq = ScalarField(g, gamma.data ** 2, check=False)
    R_new = R_J + rank_one(g, gamma_sq, zeta) + E + S5 + S6
    p_new = p_J

    # -- certificates ---------------------------------------------------------------
    dv = v_final - v_J
    mom = basis.moments(dv)
    mom_scale = max(dv.max_abs(), 1e-300) * g.box_len ** 3
    certs["killing_moments_max"] = float(np.abs(mom).max())
    certs["killing_moments_scaled"] = float(np.abs(mom).max() / mom_scale)
    if opts.enforce_moments and certs["killing_moments_scaled"] > tol.moment_tol:
        raise MomentResidual(
            f"killing moments {certs['killing_moments_scaled']:.3e} "
            f"(scaled) exceed {tol.moment_tol:g}")
    nonlocal_sum = S1 + S2 + S3 + S5
    certs["nonlocal_div_moments_max"] = float(
        np.abs(basis.moments(spectral.div_tensor(nonlocal_sum))).max())

    for name, field in (("w0", w0), ("wc", wc), ("w_phi", w_phi), ("b_new", b_new)):
        certs[f"tail_{name}"] = grown.tail_sup(field)
    certs["E_sup"] = E.max_abs()
    certs["gamma_sq_sup"] = float((gamma.data ** 2).max())
    for name, S in (("S1", S1), ("S2", S2), ("S3", S3), ("S4", S4),
                    ("S5", S5), ("S6", S6)):
        certs[f"{name}_sup"] = S.max_abs()

    e_old = total_energy(v_J, B_J)
    e_new = total_energy(v_final, B_new)
    pumped = gamma_sq.integral()
    certs["energy_gain"] = float((e_new - e_old).max())
    certs["energy_pumped"] = float(pumped.max())
    certs["energy_defect"] = float(np.abs(e_new - e_old - pumped).max())
    certs["cross_helicity_change"] = float(
        np.abs(cross_helicity(v_final, B_new) - cross_helicity(v_J, B_J)).max())

    from .diagnostics import residual_fields
    _, res_sup = residual_fields(v_final, B_new, p_new, R_new)
    certs["residual_new"] = res_sup

    if opts.keep_pieces:
        pieces = {"w0": w0, "wc": wc, "w_phi": w_phi, "w_L": w_L, "b_new": b_new,
                  "sigma1": sigma1, "sigma2": sigma2, "S1": S1, "S2": S2,
                  "S3": S3, "S4": S4, "S5": S5, "S6": S6, "E_new": E,
                  "psi0": psi0, "phi0": phi0, "phi_c": phi_c,
                  "phi_new": phi_new, "psi_new": psi_new, "f_c": f_c,
                  "gamma_mu": gamma_mu}
    else:
        pieces = {"phi_new": phi_new, "psi_new": psi_new}
    return StageOutput(v_final, B_new, p_new, R_new, pieces, certs)


def _compose_psi(psi_spec, psi_c: MapField) -> MapField:
    """psi0 o psi_c with the outer displacement evaluated analytically.

    Avoids interpolating the steep auxiliary map: its amplitude fields are
    smooth and its phases closed form, so the composed inverse is as
    accurate as the amplitude interpolation.
    """
    g = psi_c.grid
    comps = [np.empty(g.shape) for _ in range(3)]
    times = g.times()
    for it in range(g.n_time):
        P = psi_c.positions(it)
        d0 = psi_spec.displacement(P, times[it])
        for a in range(3):
            comps[a][it] = (psi_c.displacement.components[a].data[it]
                            + d0[a].reshape(g.shape[1:]))
    return MapField(g, VectorField(g, comps))
