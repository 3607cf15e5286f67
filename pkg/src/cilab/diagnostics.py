"""Cross-cutting verification: residuals, conservation series, the
stationary-phase probe, dyadic-shell tables, scaling studies, and the run
report container.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import scipy.fft as sfft

from .fields import Grid, ScalarField, SymTensorField, VectorField, self_outer
from .operators import KillingBasis, cross_helicity, magnetic_helicity, total_energy
from .parallel import fft_workers
from . import containers, spectral


def residual_fields(v: VectorField, B: VectorField, p: ScalarField,
                    R: SymTensorField):
    """|d_t v + Div(v x v - B x B) + grad p - Div R| and its sup.

    The defining identity of a subsolution; time derivative by central
    differences, everything else spectral.
    """
    g = v.grid
    dtv = spectral.time_deriv(v)
    stress = self_outer(v) - self_outer(B)
    div_stress = spectral.div_tensor(stress)
    gp = spectral.grad(p)
    div_R = spectral.div_tensor(R)
    sq = np.zeros(g.shape)
    for a in range(3):
        comp = (dtv.components[a].data + div_stress.components[a].data
                + gp.components[a].data - div_R.components[a].data)
        sq += comp ** 2
    mag = ScalarField(g, np.sqrt(sq), check=False)
    return mag, mag.max_abs()


def subsolution_residual(sub):
    return residual_fields(sub.v, sub.B, sub.p, sub.R)


def directional_derivative_sup(c: ScalarField, khat, order: int) -> float:
    """Sup of the order-fold directional derivative along khat, spectral."""
    khat = np.asarray(khat, dtype=np.float64)
    khat = khat / np.linalg.norm(khat)
    cur = c
    for _ in range(order):
        gradc = spectral.grad(cur)
        data = sum(khat[a] * gradc.components[a].data for a in range(3))
        cur = ScalarField(c.grid, data, check=False)
    return cur.max_abs()


def oscillatory_integral_bound(c: ScalarField, k, lam: float, order: int,
                               overlap=1, t_index=0) -> float:
    """Non-stationary-phase bound |int c e^(i lam k.x)| <= J* C_m / lam^m |supp c|."""
    g = c.grid
    supp = float(np.count_nonzero(c.data[t_index])) * g.cell_volume
    cm = directional_derivative_sup(c, k, order)
    kn = np.linalg.norm(np.asarray(k, dtype=np.float64))
    return overlap * cm / (kn * lam) ** order * supp


def oscillatory_integral(c: ScalarField, k, lam: float, t_index=0) -> float:
    """|int c e^(i lam k.x)| by lattice quadrature (valid below Nyquist)."""
    g = c.grid
    x1, x2, x3 = g.coords()
    k = np.asarray(k, dtype=np.float64)
    phase = lam * (k[0] * x1 + k[1] * x2 + k[2] * x3)
    val = (c.data[t_index] * np.exp(1j * phase)).sum() * g.cell_volume
    return float(np.abs(val))


def stationary_phase_probe(c: ScalarField, k, lam_max=None, n_points=6,
                           order=2, t_index=0) -> dict:
    """Decay table of |int c e^(i lam k.x)| over a dyadic frequency ramp.

    Fits the log-log slope over the ramp; a smooth c with m certified
    derivatives decays at least like lam^-m, so slope <= -m + 0.5 is the
    acceptance line.  If the magnitudes do not decay in the top octaves the
    probe reports "pre-asymptotic" instead of a slope verdict.
    """
    g = c.grid
    k = np.asarray(k, dtype=np.float64)
    kn = np.linalg.norm(k)
    if lam_max is None:
        lam_max = 0.75 * g.nyquist() / kn
    lams = lam_max * 2.0 ** (-np.arange(n_points)[::-1].astype(float))
    vals = np.array([oscillatory_integral(c, k, lam, t_index) for lam in lams])
    table = [{"lam": float(l), "value": float(v)} for l, v in zip(lams, vals)]
    if np.all(vals == 0.0):
        return {"table": table, "slope": 0.0, "status": "zero"}
    floor = max(vals.max(), 1e-300) * 1e-15
    safe = np.maximum(vals, floor)
    decaying = vals[-1] < 0.5 * vals[max(0, n_points // 2 - 1)]
    if not decaying:
        status = "pre-asymptotic"
    else:
        status = "decay"
    logl = np.log(lams)
    logv = np.log(safe)
    A = np.vstack([logl, np.ones_like(logl)]).T
    coef, res, *_ = np.linalg.lstsq(A, logv, rcond=None)
    slope = float(coef[0])
    return {"table": table, "slope": slope, "status": status,
            "passes_order": bool(slope <= -order + 0.5) if status == "decay" else False}


def dyadic_shell_table(c: ScalarField, t_index=0) -> list:
    """Sup of the dyadic-band-filtered field per shell (discrete transform).

    A blunt stand-in for frequency-localized norms: shell N covers angular
    wavenumbers in (2^(N-1), 2^N].
    """
    g = c.grid
    spec = sfft.fftn(c.data[t_index], workers=fft_workers())
    k = g.wavenumbers()
    kk = np.sqrt(k.reshape(-1, 1, 1) ** 2 + k.reshape(1, -1, 1) ** 2
                 + k.reshape(1, 1, -1) ** 2)
    out = []
    top = int(np.ceil(np.log2(max(kk.max(), 1.0)))) + 1
    lo = 0.0
    for N in range(top):
        hi = 2.0 ** N
        mask = (kk > lo) & (kk <= hi)
        band = np.zeros_like(spec)
        band[mask] = spec[mask]
        sup = float(np.abs(sfft.ifftn(band, workers=fft_workers())).max())
        out.append({"shell": N, "k_hi": hi, "sup": sup})
        lo = hi
    return out


def scaling_study(measure, values, label="") -> dict:
    """Log-log fit of measure(value) against the knob values (>= 2 points)."""
    values = list(values)
    if len(values) < 2:
        raise ValueError("scaling study needs at least two knob values")
    ys = [float(measure(v)) for v in values]
    lx = np.log(np.asarray(values, dtype=np.float64))
    ly = np.log(np.maximum(np.asarray(ys), 1e-300))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit_residual = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return {"label": label, "knob_values": [float(v) for v in values],
            "measured": ys, "exponent": float(coef[0]),
            "fit_residual": fit_residual}


def conserved_series(v: VectorField, B: VectorField,
                     basis: KillingBasis | None = None) -> dict:
    g = v.grid
    if basis is None:
        basis = KillingBasis(g)
    out = {
        "t": g.times().tolist(),
        "energy": total_energy(v, B).tolist(),
        "cross_helicity": cross_helicity(v, B).tolist(),
        "moments": basis.moments(B).tolist(),
    }
    try:
        out["helicity"] = magnetic_helicity(B, mean_tol=1e-2, div_tol=1e-2).tolist()
    except Exception:
        out["helicity"] = [float("nan")] * g.n_time
    return out


SCHEMA = "cilab-report/1"


class RunReport:
    """Deterministic run summary: ledger snapshot, certificate blocks,
    conserved-quantity series, norm tables, inequality slack."""

    def __init__(self, config=None):
        self.data = {"schema": SCHEMA, "config": config, "ledger": None,
                     "inequalities": None, "stages": [], "series": None,
                     "norms": [], "studies": [], "notes": []}

    def set_ledger(self, ledger):
        self.data["ledger"] = ledger.as_dict()

    def set_inequalities(self, report):
        self.data["inequalities"] = report

    def add_stage(self, label, certificates):
        self.data["stages"].append({"label": label, "certificates": certificates})

    def set_series(self, series):
        self.data["series"] = series

    def add_norm(self, name, order, value):
        self.data["norms"].append((name, order, float(value)))

    def add_study(self, study):
        self.data["studies"].append(study)

    def note(self, text):
        self.data["notes"].append(text)

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True, default=_json_default)
        if self.data["norms"]:
            containers.write_norm_csv(os.path.join(out_dir, "norms.csv"),
                                      self.data["norms"])
        series = self.data["series"]
        if series and series.get("helicity") is not None:
            containers.write_series_csv(
                os.path.join(out_dir, "series.csv"), series["t"], series["energy"],
                series["helicity"], series["cross_helicity"], series["moments"])
        for i, st in enumerate(self.data["studies"]):
            p = os.path.join(out_dir, f"study_{i}_{st.get('label', 'x')}.tsv")
            with open(p, "w") as fh:
                fh.write("knob\tvalue\n")
                for kv, yv in zip(st["knob_values"], st["measured"]):
                    fh.write(f"{kv:.17g}\t{yv:.17g}\n")
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    return repr(o)
