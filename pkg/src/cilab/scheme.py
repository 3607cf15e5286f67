"""Subsolution state, the rank-one decomposition basis, step amplitudes,
the six-mini-step orchestration, and initial data.

A subsolution is a tuple (v, B, p, R) with compact support whose momentum
defect is measured by the symmetric stress R.  A step cancels R by six
directional stages whose amplitudes come from the pointwise rank-one
decomposition of Id - (traceless R)/rho near the identity; the pure-trace
remainder is absorbed into the pressure at the end of the step.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .blocks import ParamLedger
from .containers import read_record, write_record
from .errors import (ConfigError, EnergyWindowViolation, MomentResidual,
                     OutsideNeighborhood)
from .fields import (Grid, ScalarField, SupportBox, SymTensorField, VectorField,
                     SYM_INDEX, rank_one)
from .operators import (KillingBasis, cross_helicity, inverse_divergence,
                        killing_moments, magnetic_helicity, total_energy)
from .options import StageOptions
from .stage import StageOutput, run_stage
from .synth import plateau_cutoff, radial_bump, scaled_copy, supported_solenoidal
from . import spectral


# ---------------------------------------------------------------------------
# geometric decomposition


class GeometricBasis:
    """Six unit directions whose dyads span the symmetric 3x3 matrices.

    Near the identity every symmetric S decomposes as
    sum_j Gamma_j(S)^2 zeta_j x zeta_j with smooth positive coefficients;
    the identity itself has all squared coefficients equal to 1/2.
    """

    def __init__(self, r_geom=0.3):
        s = 1.0 / np.sqrt(2.0)
        self.zetas = np.array([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.5, 0.5, s],
            [0.5, 0.5, -s],
            [0.5, -0.5, s],
            [0.5, -0.5, -s],
        ])
        self.r_geom = float(r_geom)
        # columns: the six dyads in upper-triangle coordinates
        M = np.empty((6, 6))
        for jcol, z in enumerate(self.zetas):
            M[:, jcol] = [z[i] * z[j] for (i, j) in SYM_INDEX]
        self.matrix = M
        self.inverse = np.linalg.inv(M)
        self.condition = float(np.linalg.cond(M))

    def coordinates(self, S) -> np.ndarray:
        """Linear coordinates x with S = sum x_j zeta_j x zeta_j."""
        S = np.asarray(S, dtype=np.float64)
        vec = np.array([S[i, j] for (i, j) in SYM_INDEX])
        return self.inverse @ vec

    def gamma_coefficients(self, S) -> np.ndarray:
        """Square roots of the coordinates; S must be close enough to Id."""
        S = np.asarray(S, dtype=np.float64)
        dev = S - np.eye(3)
        if np.linalg.norm(dev, 2) >= self.r_geom:
            raise OutsideNeighborhood(
                f"|S - Id| = {np.linalg.norm(dev, 2):.3g} >= r_geom = {self.r_geom}")
        x = self.coordinates(S)
        if np.any(x <= 0.0):
            raise OutsideNeighborhood(
                f"coordinate {x.min():.3g} <= 0; S outside the decomposable ball")
        return np.sqrt(x)

    def reconstruct(self, gammas) -> np.ndarray:
        out = np.zeros((3, 3))
        for gj, z in zip(np.asarray(gammas) ** 2, self.zetas):
            out += gj * np.outer(z, z)
        return out

    def coordinates_field(self, comps6) -> np.ndarray:
        """Vectorized coordinates for stacked tensor data (6, ...)."""
        flat = np.stack([c.reshape(-1) for c in comps6])
        return self.inverse @ flat


# ---------------------------------------------------------------------------
# subsolution


@dataclasses.dataclass
class Subsolution:
    v: VectorField
    B: VectorField
    p: ScalarField
    R: SymTensorField
    support: SupportBox
    q: int = 0
    j: int = 0
    history: list = dataclasses.field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.v.grid

    def diagnostics(self, tol=None, basis=None) -> dict:
        from .diagnostics import residual_fields
        _, res = residual_fields(self.v, self.B, self.p, self.R)
        moments = killing_moments(self.B, basis=basis)
        out = {
            "div_v": spectral.div(self.v).max_abs(),
            "div_B": spectral.div(self.B).max_abs(),
            "residual": res,
            "support_tail_v": self.support.tail_sup(self.v),
            "support_tail_B": self.support.tail_sup(self.B),
            "support_tail_R": self.support.tail_sup(self.R),
            "energy": total_energy(self.v, self.B).tolist(),
            "cross_helicity": cross_helicity(self.v, self.B).tolist(),
            "B_killing_moments_max": float(np.abs(moments).max()),
        }
        try:
            out["helicity"] = magnetic_helicity(self.B, mean_tol=1e-2,
                                                div_tol=1e-2).tolist()
        except Exception:
            out["helicity"] = None
        return out

    def save(self, path):
        meta = {
            "q": self.q, "j": self.j,
            "support_center": self.support.center.tolist(),
            "support_radius": self.support.radius,
            "history": self.history,
        }
        blob = json.dumps(meta).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for field in (self.v, self.B, self.p, self.R):
                write_record(fh, field)

    @classmethod
    def load(cls, path, grid=None) -> "Subsolution":
        with open(path, "rb") as fh:
            (nmeta,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(nmeta).decode())
            v = read_record(fh, grid)
            B = read_record(fh, v.grid)
            p = read_record(fh, v.grid)
            R = read_record(fh, v.grid)
        return cls(v=v, B=B, p=p, R=R,
                   support=SupportBox(meta["support_center"], meta["support_radius"]),
                   q=meta["q"], j=meta["j"], history=meta["history"])


# ---------------------------------------------------------------------------
# step amplitudes


def step_amplitudes(sub: Subsolution, e_profile: np.ndarray, ledger: ParamLedger,
                    basis: GeometricBasis | None = None, chi_rim=0.18):
    """(rho(t), chi_q, [gamma_0 .. gamma_5]) for one step.

    rho balances the energy budget so the six squared amplitudes integrate
    to the gap e(t) - delta_{q+2}/2 - E(t); the field-level identity
    sum_j gamma_j^2 zeta_j x zeta_j = chi^2 rho Id - R + tr(R)/3 Id is the
    construction's own certificate and is returned with the amplitudes.
    """
    if basis is None:
        basis = GeometricBasis()
    g = sub.grid
    e_profile = np.asarray(e_profile, dtype=np.float64)
    if e_profile.shape != (g.n_time,):
        raise ConfigError("e_profile must have one value per time slice")
    energy = total_energy(sub.v, sub.B)
    gap = e_profile - energy
    lo, hi = 0.25 * ledger.delta_qp1, 0.75 * ledger.delta_qp1
    if np.any(gap < lo) or np.any(gap > hi):
        raise EnergyWindowViolation(
            f"energy gap range [{gap.min():.4g}, {gap.max():.4g}] outside "
            f"[{lo:.4g}, {hi:.4g}]")
    chi_q = plateau_cutoff(g, sub.support, rim_fraction=chi_rim)
    chi_sq_mass = float((chi_q * chi_q).integral()[0])
    rho = (gap - 0.5 * ledger.delta_qp2) / (3.0 * chi_sq_mass)
    if np.any(rho <= 0.0):
        raise EnergyWindowViolation("nonpositive oscillation amplitude rho")

    # pointwise coordinates of Id - traceless(R)/rho
    trace = sub.R.trace()
    dev = [sub.R.components[pos].data - (trace.data / 3.0 if i == j else 0.0)
           for pos, (i, j) in enumerate(SYM_INDEX)]
    rho_bc = rho.reshape(-1, 1, 1, 1)
    comps = []
    for pos, (i, j) in enumerate(SYM_INDEX):
        base = 1.0 if i == j else 0.0
        comps.append(base - dev[pos] / rho_bc)
    coords = basis.coordinates_field([c for c in comps])
    if np.any(coords <= 0.0):
        raise OutsideNeighborhood(
            f"stress too large for the decomposition: min coordinate "
            f"{coords.min():.3g} <= 0 (raise rho or shrink R)")
    gammas = []
    sqrt_rho = np.sqrt(rho).reshape(-1, 1, 1, 1)
    for jdir in range(6):
        gj = chi_q.data * sqrt_rho * np.sqrt(coords[jdir]).reshape(g.shape)
        gammas.append(ScalarField(g, gj, check=False))

    # identity certificate
    recon = [np.zeros(g.shape) for _ in range(6)]
    for jdir, z in enumerate(basis.zetas):
        gsq = gammas[jdir].data ** 2
        for pos, (i, j) in enumerate(SYM_INDEX):
            recon[pos] += gsq * z[i] * z[j]
    worst = 0.0
    chi_sq = chi_q.data ** 2
    for pos, (i, j) in enumerate(SYM_INDEX):
        target = (chi_sq * rho_bc if i == j else 0.0) - sub.R.components[pos].data \
            + (trace.data / 3.0 if i == j else 0.0)
        worst = max(worst, float(np.abs(recon[pos] - target).max()))
    cert = {"decomposition_identity": worst,
            "rho_range": (float(rho.min()), float(rho.max())),
            "chi_sq_mass": chi_sq_mass,
            "basis_condition": basis.condition}
    return rho, chi_q, gammas, cert


def default_energy_profile(sub: Subsolution, ledger: ParamLedger,
                           position=0.5) -> np.ndarray:
    """Strictly decreasing profile inside the admissible window.

    Current energy plus `position` of the window plus a gentle downward
    tilt; position near the window floor keeps the pumped amplitudes (and
    with them every perturbation norm) small.
    """
    g = sub.grid
    if not 0.32 <= position <= 0.68:
        raise ConfigError(f"window position {position} leaves no tilt room")
    energy = total_energy(sub.v, sub.B)
    width = 0.5 * ledger.delta_qp1
    tilt = (width / 8.0) * (g.times() / g.t_final)
    return energy + position * ledger.delta_qp1 - tilt


# ---------------------------------------------------------------------------
# step and initial data


def run_step(sub: Subsolution, e_profile, ledger: ParamLedger,
             opts: StageOptions | None = None,
             basis: GeometricBasis | None = None) -> Subsolution:
    """Six directional stages followed by the pressure absorption.

    The stress accumulated over the stages is chi^2 rho Id + tr(R)/3 Id
    plus the stage errors; the scalar part moves into the pressure, which
    leaves the summed stage errors as the new stress.
    """
    if opts is None:
        opts = StageOptions()
    if basis is None:
        basis = GeometricBasis()
    rho, chi_q, gammas, amp_cert = step_amplitudes(sub, e_profile, ledger, basis)
    record = {"kind": "step", "q": sub.q, "amplitudes": amp_cert, "stages": []}
    R_entry = sub.R
    trace_entry = R_entry.trace()
    chi_sq_rho = ScalarField(
        sub.grid, chi_q.data ** 2 * np.asarray(rho).reshape(-1, 1, 1, 1),
        check=False)
    current = sub
    for jdir in range(6):
        led_j = ledger.with_ministep(jdir)
        out = run_stage(current, gammas[jdir], basis.zetas[jdir], led_j, opts)
        record["stages"].append({"j": jdir, "certificates": _plain(out.certificates)})
        current = Subsolution(
            v=out.v_new, B=out.B_new, p=out.p_new, R=out.R_new,
            support=current.support, q=sub.q, j=jdir + 1,
            history=current.history)
    # absorb the scalar part into the pressure: moving s Id from R to the
    # pressure gradient side requires p -> p - s with s = chi^2 rho + tr R/3
    shift = ScalarField(sub.grid,
                        chi_sq_rho.data + trace_entry.data / 3.0, check=False)
    p_new = ScalarField(sub.grid, current.p.data - shift.data, check=False)
    R_comps = []
    for pos, (i, j) in enumerate(SYM_INDEX):
        d = current.R.components[pos].data.copy()
        if i == j:
            d = d - shift.data
        R_comps.append(d)
    R_new = SymTensorField(sub.grid, R_comps)
    from .stage import stage_support_growth
    grown = stage_support_growth(sub.support, sub.grid, ledger, opts)
    new = Subsolution(v=current.v, B=current.B, p=p_new, R=R_new,
                      support=grown, q=sub.q + 1, j=0, history=sub.history + [record])
    return new


def support_ladder_radius(r_bar: float, q: int, j: int, i: int) -> float:
    """Nominal support radius after stage (q, j), sub-level i in {0, 1, 2}.

    The ladder grows from r_bar/2 toward r_bar; the level offset by one
    keeps the q = 0 ball at r_bar/2 (where the initial data lives).
    """
    order = q + j / 6.0 + 1.0
    return (1.0 - 2.0 ** (-order - i / 18.0)) * r_bar


def initial_subsolution(grid: Grid, ledger: ParamLedger, preset="abc",
                        epsilon=0.5, s=0.1, amplitude=0.2, r_support=None,
                        basis: KillingBasis | None = None, moment_tol=1e-8,
                        b_bar: VectorField | None = None):
    """Compactly supported initial subsolution and its energy profile.

    The base solenoidal field is corrected by a dilated copy so that all
    six Killing moments vanish; the velocity is a slowly decaying multiple
    of the magnetic field, and the stress solves the resulting momentum
    defect through the spectral inverse divergence (the time derivative is
    linear in t, so the lattice time differences see it exactly).
    """
    if r_support is None:
        r_support = 0.35 * grid.box_len
    center = grid.center
    a_eps = epsilon / (1.0 + r_support)
    stretch = a_eps ** 0.25          # dilation factor < 1: the copy is wider
    base_radius = 0.45 * r_support * stretch ** 1.0
    if b_bar is None:
        b_bar = supported_solenoidal(grid, center, base_radius, kind=preset,
                                     amplitude=1.0)
        n1 = spectral.norm_report(b_bar, max_order=1)
        b_bar = b_bar * (amplitude / max(n1[0] + n1[1], 1e-300))
    n1 = spectral.norm_report(b_bar, max_order=1)
    if n1[0] + n1[1] > 0.25 * (1 + 1e-9):
        raise ConfigError(
            f"base field C^1 size {n1[0] + n1[1]:.3g} exceeds 1/4; rescale it")
    copy = scaled_copy(b_bar, a_eps, stretch, center)
    # the resampled copy is solenoidal only to interpolation accuracy;
    # project once so the subsolution invariants start clean
    B0 = spectral.leray_project(b_bar - copy)
    if basis is None:
        basis = KillingBasis(grid)
    support = SupportBox(center, 0.5 * r_support).validate(grid)
    moments = killing_moments(B0, basis=basis)
    scale = max(B0.max_abs(), 1e-300) * grid.box_len ** 3
    mom_scaled = float(np.abs(moments).max()) / scale
    if mom_scaled > moment_tol:
        raise MomentResidual(
            f"initial moments {mom_scaled:.3e} (scaled) exceed {moment_tol:g}")

    k = s * ledger.delta_qp1 * ledger.lam_j ** (-ledger.tau) / grid.t_final
    tt = grid.times().reshape(-1, 1, 1, 1)
    v0 = VectorField(grid, [ScalarField(grid, (1.0 - k * tt) * c.data, check=False)
                            for c in B0.components])
    dt_v0 = VectorField(grid, [c * (-k) for c in B0.components])
    # slice means of B0 are quadrature artifacts of the dilated copy; the
    # zero mode has no preimage and is dropped by the solve
    S = inverse_divergence(dt_v0, mean_tol=1e-4)
    coef = ((1.0 - k * tt) ** 2 - 1.0)   # so that v0 x v0 - B0 x B0 = coef B0 x B0
    bb = [B0.components[i].data * B0.components[j].data for (i, j) in SYM_INDEX]
    R0 = SymTensorField(grid, [ScalarField(grid, S.components[pos].data
                                           + coef * bb[pos], check=False)
                               for pos in range(6)])
    p0 = ScalarField.zeros(grid)
    sub = Subsolution(v=v0, B=B0, p=p0, R=R0, support=support, q=ledger.q, j=0)
    e_profile = default_energy_profile(sub, ledger)
    return sub, e_profile


def _plain(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        elif isinstance(v, np.ndarray):
            out[k] = v.tolist()
        elif isinstance(v, (int, float, bool, str, type(None), list, tuple, dict)):
            out[k] = v
        else:
            out[k] = repr(v)
    return out
