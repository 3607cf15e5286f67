"""Property-suite runner: every module invariant at a small grid, printed
as a pass/fail matrix.  Used by the `verify` CLI subcommand and callable
in-process from tests.
"""

from __future__ import annotations

import numpy as np

from . import blocks, diffeo, operators, spectral, synth
from .blocks import ParamLedger, build_cutoffs, build_psi0, build_w0_wc
from .diagnostics import residual_fields
from .fields import Grid, MapField, ScalarField, SupportBox, VectorField
from .mollify import mollify_in_spacetime
from .sampling import sample_at
from .scheme import GeometricBasis, Subsolution, initial_subsolution
from .stage import run_stage
from .options import StageOptions


class Check:
    def __init__(self, name, value, tol, passed=None):
        self.name = name
        self.value = float(value)
        self.tol = float(tol)
        self.passed = bool(value <= tol) if passed is None else bool(passed)

    def row(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:48s} value={self.value:.3e} tol={self.tol:.3e}"


def _lab_ledger(grid, lam_jp1=4.0):
    return blocks.build_ledger({
        "mode": "lab", "lam_j": 0.45, "mu": 1.0, "eta": 2.0,
        "lam_jp1": lam_jp1, "delta_q": 0.3, "delta_qp1": 0.05,
        "delta_qp2": 0.006, "tau": 0.01, "mu_t": 0.24,
        "nyquist_safety": 0.9,
    }, grid)


def run_verify(n_space=16, n_time=5, seed=7, print_rows=True) -> list:
    """All module invariants at a small grid; returns the check list."""
    rng = np.random.default_rng(seed)
    g = Grid(n_space, n_time)
    checks = []

    def add(name, value, tol, passed=None):
        c = Check(name, value, tol, passed)
        checks.append(c)
        if print_rows:
            print(c.row())
        return c

    # spectral calculus
    x1 = ScalarField.from_function(g, lambda a, b, c: np.sin(a))
    d = spectral.deriv(x1, 1)
    exact = ScalarField.from_function(g, lambda a, b, c: np.cos(a))
    add("deriv sin = cos", (d - exact).max_abs(), 1e-12)
    abc = synth.abc_field(g)
    add("curl(abc) = abc", (spectral.curl(abc) - abc).max_abs(), 1e-10)
    w = synth.random_vector(g, 3, rng, solenoidal=False)
    add("div curl = 0", spectral.div(spectral.curl(w)).max_abs(),
        1e-11 * max(spectral.norm_report(w, 1)[1], 1.0))
    f = synth.random_band_limited(g, 3, rng)
    f0 = ScalarField(g, f.data - f.data.mean(axis=(1, 2, 3), keepdims=True))
    back = spectral.inv_laplacian(spectral.laplacian(f0), mean_tol=1e-6)
    add("invlap o lap = id", (back - f0).max_abs(), 1e-11 * max(f0.max_abs(), 1e-300))

    # sampling: exact mode against the trigonometric oracle
    pts = rng.uniform(0, g.box_len, size=(3, 40))
    vals = sample_at(f0, pts, 0, mode="exact")
    kx = g.wavenumbers()
    spec = np.fft.fftn(f0.data[0]) / g.n_space ** 3
    oracle = np.zeros(40, dtype=complex)
    for i in range(g.n_space):
        for jj in range(g.n_space):
            for kk2 in range(g.n_space):
                cc = spec[i, jj, kk2]
                if abs(cc) > 1e-14:
                    oracle += cc * np.exp(1j * (kx[i] * pts[0] + kx[jj] * pts[1]
                                                + kx[kk2] * pts[2]))
    add("exact sampling = trig interpolant", np.abs(vals - oracle.real).max(),
        1e-12 * max(f0.max_abs(), 1e-300))

    # mollifier: lattice translation equivariance (exact)
    bump = synth.radial_bump(g, g.center, 0.3 * g.box_len / 2, 0.45 * g.box_len / 2)
    mol = mollify_in_spacetime(bump, 3 * g.h, 2.5 * g.dt)
    shifted = ScalarField(g, np.roll(bump.data, 2, axis=1))
    mol_shift = mollify_in_spacetime(shifted, 3 * g.h, 2.5 * g.dt)
    add("mollify commutes with lattice shift",
        np.abs(np.roll(mol.data, 2, axis=1) - mol_shift.data).max(), 0.0 + 1e-15)
    add("mollify contracts sup", mol.max_abs(), bump.max_abs() * (1 + 1e-12))

    # inverse divergence and curl inverse
    src = synth.random_vector(g, 3, rng, mean_free=True)
    S = operators.inverse_divergence(src, mean_tol=1e-6)
    add("Div(R f) = f", (spectral.div_tensor(S) - src).max_abs(),
        1e-10 * max(src.max_abs(), 1e-300))
    g1 = synth.random_vector(g, 3, rng, mean_free=True)
    g2 = synth.random_vector(g, 2, rng, mean_free=True)
    lin = operators.inverse_divergence(g1 + g2 * 2.0, mean_tol=1e-6)
    lin2 = operators.inverse_divergence(g1, mean_tol=1e-6) \
        + operators.inverse_divergence(g2, mean_tol=1e-6) * 2.0
    add("R is linear", (lin - lin2).max_abs(), 1e-12 * max(lin.max_abs(), 1e-300))
    Bf = synth.random_vector(g, 3, rng, solenoidal=True, mean_free=True)
    A = operators.curl_inverse(Bf, mean_tol=1e-6, div_tol=1e-6)
    add("curl(curl_inverse(B)) = B", (spectral.curl(A) - Bf).max_abs(),
        1e-10 * max(Bf.max_abs(), 1e-300))
    # helicity gauge invariance
    chi = synth.random_band_limited(g, 2, rng)
    Ashift = A + spectral.grad(chi)
    h1 = operators.magnetic_helicity(Bf, mean_tol=1e-6, div_tol=1e-6)
    h2 = Ashift.dot(Bf).integral()
    add("helicity gauge invariance", np.abs(h1 - h2).max(),
        1e-10 * max(np.abs(h1).max(), 1.0))
    add("helicity(abc) = 3 (2 pi)^3",
        abs(operators.magnetic_helicity(abc, mean_tol=1e-6, div_tol=1e-6)[0]
            - 3.0 * (2 * np.pi) ** 3), 1e-10 * 3.0 * (2 * np.pi) ** 3)

    # killing moments: divergence-free compact fields carry no translation
    box = SupportBox(g.center, 0.22 * g.box_len).validate(g)
    comp = synth.supported_solenoidal(g, g.center, 0.8 * box.radius, "abc", 0.5)
    mom = operators.killing_moments(comp)
    add("translational moments of solenoidal field", np.abs(mom[:, :3]).max(),
        1e-9 * comp.max_abs() * g.box_len ** 3)

    # maps
    disp = VectorField(g, [synth.random_band_limited(g, 2, rng, amplitude=0.05)
                           for _ in range(3)])
    m = MapField(g, disp)
    tr = diffeo.jacobian_det(m, method="trace")
    cf = diffeo.jacobian_det(m, method="cofactor")
    add("jacobian trace vs cofactor", np.abs(tr.det_field.data
                                             - cf.det_field.data).max(), 1e-12)
    minv = diffeo.invert_near_identity(m, inv_tol=1e-12 * g.box_len)
    add("near-identity inverse certificate",
        diffeo.composition_defect(m, minv), 1e-8 * g.box_len)

    # geometric decomposition
    basis = GeometricBasis()
    gid = basis.gamma_coefficients(np.eye(3))
    add("identity coefficients = 1/2", np.abs(gid ** 2 - 0.5).max(), 1e-14)
    Srand = np.eye(3)
    pert = rng.normal(size=(3, 3)) * 0.05
    Srand = Srand + 0.5 * (pert + pert.T)
    gam = basis.gamma_coefficients(Srand)
    add("decomposition round trip", np.abs(basis.reconstruct(gam) - Srand).max(),
        1e-12)

    # inventory invariants on a small lab stage
    led = _lab_ledger(g)
    amp = synth.radial_bump(g, g.center, 0.5, 1.1)
    amp = amp * 0.1
    gamma_mu = mollify_in_spacetime(amp, 1.0 / led.mu,
                                    max(0.45 * g.t_final, 2.0 * g.dt))
    inv = build_cutoffs(led, gamma_mu, np.array([0.0, 0.0, 1.0]),
                        synth.abc_field(g, 0.05, 0.05, 0.05),
                        synth.abc_field(g, 0.02, 0.02, 0.02))
    dev, chi_max, overlap = inv.partition_deviation()
    add("partition of unity on support", dev, 1e-12)
    add("partition sum <= 1 everywhere", max(chi_max - 1.0, 0.0), 1e-12)
    add("overlap count <= 16", overlap, 16, passed=overlap <= 16)
    if len(inv):
        kz = max(abs(np.dot(e.k, inv.zeta)) for e in inv.entries)
        kb = max(abs(np.dot(e.k, e.B_frozen)) for e in inv.entries)
        add("k orthogonal to zeta", kz, 1e-14)
        add("k orthogonal to frozen B", kb, 1e-14)
        pairs_ok = True
        for i, e in enumerate(inv.entries):
            for e2 in inv.entries[i + 1:]:
                if max(abs(e.m[a] - e2.m[a]) for a in range(4)) <= 1:
                    if e.l == e2.l:
                        pairs_ok = False
        add("overlapping cutoffs get distinct roots", 0.0, 0.5, passed=pairs_ok)
        w0, wc, cert = build_w0_wc(inv)
        add("curl potential solenoidal", cert["div_curl_potential"],
            1e-10 * max(spectral.norm_report(w0, 1)[1], 1.0))
        spec0, psi0 = build_psi0(inv)
        phi0, fp = diffeo.invert_by_fixed_point(spec0, fp_tol=1e-10 * g.box_len)
        add("fixed point certificate", fp["fixed_point_residual"], 1e-8 * g.box_len)
        add("fixed point contracts", fp["update_ratio"], 1.0,
            passed=fp["update_ratio"] < 1.0)

    # identity stage and initial data (coarse grids need a loose moment gate:
    # the dilated-copy cancellation is quadrature-limited)
    sub, e_prof = initial_subsolution(g, led, preset="abc", amplitude=0.08,
                                      moment_tol=1e-3)
    _, res = residual_fields(sub.v, sub.B, sub.p, sub.R)
    add("initial subsolution residual", res, StageOptions().tol.resid_tol(g))
    zero_gamma = ScalarField.zeros(g)
    out = run_stage(sub, zero_gamma, np.array([1.0, 0.0, 0.0]), led)
    same = (out.v_new is sub.v) and (out.B_new is sub.B) and (out.R_new is sub.R)
    add("zero-amplitude stage is the identity", 0.0, 0.5, passed=same)
    return checks


def verify_passed(checks) -> bool:
    return all(c.passed for c in checks)
