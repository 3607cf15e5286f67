"""Oscillatory building blocks of a stage.

Holds the parameter ledger (theory and lab modes), the space-time cutoff
partition with its prime-root phase coefficients, the oscillation phases,
the auxiliary map and its fixed-point description, and the explicit
velocity perturbations.

Conventions.  The cutoff lattice lives at spacing 1/mu in space and
1/mu_t in time; each cutoff is a product of four copies of a 1-d bump
with the squared-partition property, so any point meets at most 16 of
them.  Overlapping cutoffs carry distinct square roots of primes as phase
coefficients, which rules out resonance between different modes.  Phases
are affine, theta_m = l_m lam k_m . (x - v_m t) + l_m eta t; all phase
calculus is closed form and only the amplitudes are ever sampled.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import (ConfigError, HierarchyViolation, NyquistViolation,
                     PrimeExhausted, SupportViolation)
from .fields import Grid, MapField, ScalarField, VectorField
from .sampling import ScalarSampler
from . import spectral

PRIMES_16 = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# parameter ledger


@dataclasses.dataclass
class ParamLedger:
    """All stage parameters, either derived from (a, b, beta, tau) or set
    directly in lab mode.  Stage code consumes only the derived numbers, so
    both modes share one code path."""

    mode: str
    q: int = 0
    j: int = 0
    a: float | None = None
    b: float | None = None
    beta: float | None = None
    tau: float = 0.01
    lam_j: float = 0.0
    lam_jp1: float = 0.0
    delta_q: float = 1.0
    delta_qp1: float = 1.0
    delta_qp2: float = 1.0
    mu: float = 0.0
    eta: float = 0.0
    mu_t: float | None = None
    placement_scale: float = 2.0
    nyquist_safety: float = 0.25
    fp_contraction_const: float = 8.0

    @property
    def step_order(self) -> float:
        return self.q + self.j / 6.0

    def temporal_cutoff_scale(self) -> float:
        return self.mu if self.mu_t is None else self.mu_t

    def with_ministep(self, j: int) -> "ParamLedger":
        out = dataclasses.replace(self, j=j)
        if self.mode == "theory":
            _derive_theory(out)
        return out

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _derive_theory(led: ParamLedger):
    a, b, beta, tau = led.a, led.b, led.beta, led.tau
    order = led.step_order
    lg = math.log(a)

    def power(exp_of_a):
        v = exp_of_a * lg
        return math.inf if v > 700.0 else math.exp(v)

    led.lam_j = power(b ** order)
    led.lam_jp1 = power(b ** (order + 1.0 / 6.0))
    led.delta_q = power(-2.0 * beta * b ** led.q)
    led.delta_qp1 = power(-2.0 * beta * b ** (led.q + 1))
    led.delta_qp2 = power(-2.0 * beta * b ** (led.q + 2))
    ratio_exp = (-2.0 * beta * b ** (led.q + 2)) - 0.5 * (-2.0 * beta * b ** (led.q + 1))
    led.mu = power(ratio_exp + (1.0 / 3.0 - 11.0 * tau) * b ** (order + 1.0 / 6.0))
    led.eta = power(ratio_exp + (1.0 - 11.0 * tau) * b ** (order + 1.0 / 6.0))


def build_ledger(config: dict, grid: Grid | None = None) -> ParamLedger:
    """Construct and validate the parameter ledger.

    Theory mode derives everything from (a, b, beta, tau, q, j); lab mode
    takes the frequencies and amplitudes directly but still enforces the
    ordering lam_j < mu < eta < lam_jp1.  With a grid, the end frequency
    must also clear the Nyquist bound; without one (pure parameter study)
    that check is skipped.
    """
    cfg = dict(config)
    mode = cfg.pop("mode", None)
    if mode not in ("theory", "lab"):
        raise ConfigError(f"ledger mode must be 'theory' or 'lab', got {mode!r}")
    shared = {"q", "j", "tau", "mu_t", "placement_scale", "nyquist_safety",
              "fp_contraction_const"}
    known = shared | ({"a", "b", "beta"} if mode == "theory" else
                      {"lam_j", "lam_jp1", "mu", "eta",
                       "delta_q", "delta_qp1", "delta_qp2"})
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown ledger keys: {sorted(unknown)}")
    led = ParamLedger(mode=mode, **cfg)
    cap = led.nyquist_safety * grid.nyquist() if grid is not None else None
    if mode == "theory":
        for name in ("a", "b", "beta"):
            if getattr(led, name) is None:
                raise ConfigError(f"theory mode requires {name}")
        if led.a <= 1.0:
            raise ConfigError("theory mode requires a > 1")
        # the end-of-step frequency lambda_{q+1} = a**(b**(q+1)) must fit;
        # checked in log space because it overflows for interesting ladders
        if cap is not None:
            log_lam_next = led.b ** (led.q + 1) * math.log(led.a)
            if log_lam_next > math.log(cap):
                raise NyquistViolation(
                    f"lambda_{led.q + 1} = {led.a:g}^({led.b:g}^{led.q + 1}) "
                    f"= {led.a:g}^{led.b ** (led.q + 1):.6g} exceeds the grid "
                    f"limit {cap:.4g} (Nyquist {grid.nyquist():.4g} x safety "
                    f"{led.nyquist_safety:g})")
        _derive_theory(led)
    else:
        for name in ("lam_j", "lam_jp1", "mu", "eta"):
            if getattr(led, name) <= 0:
                raise ConfigError(f"lab mode requires positive {name}")
        if not (led.lam_j < led.mu < led.eta < led.lam_jp1):
            raise HierarchyViolation(
                f"need lam_j < mu < eta < lam_jp1, got "
                f"{led.lam_j:g}, {led.mu:g}, {led.eta:g}, {led.lam_jp1:g}")
    if cap is not None and led.lam_jp1 > cap:
        raise NyquistViolation(
            f"lam_jp1 = {led.lam_jp1:.4g} exceeds the grid limit {cap:.4g} "
            f"(Nyquist {grid.nyquist():.4g} x safety {led.nyquist_safety:g})")
    return led


def beta_admissibility_ratio(b: float) -> float:
    """Upper bound on the regularity budget admitted by a ladder exponent b."""
    return (b ** (1.0 / 6.0) / 3.0 - 1.0) / (6.0 * b ** 2 - 3.0 * b - 1.0)


_INEQUALITIES = (
    # name, LHS factors as (symbol, power); RHS is delta_qp2 * lam_jp1^(-10 tau)
    ("param_1", (("delta_qp1", 1.5), ("mu", 3), ("lam_jp1", 1), ("eta", -2))),
    ("param_2", (("delta_q", 0.5), ("delta_qp1", 0.5), ("lam_j", 1),
                 ("lam_jp1", "1+tau"), ("mu", -1), ("eta", -1))),
    ("param_3", (("delta_qp1", 1), ("mu", 2), ("eta", -1))),
    ("param_4", (("delta_qp1", 1.5), ("mu", 1), ("lam_jp1", 2), ("eta", -3))),
    ("param_5", (("delta_qp1", 1), ("mu", 2), ("lam_jp1", "1+tau"), ("eta", -2))),
    ("lambda_ratio", (("delta_q", 0.5), ("lam_j", 1), ("mu", -1))),
    ("param_6", (("delta_q", 0.5), ("delta_qp1", 0.5), ("lam_j", 2),
                 ("lam_jp1", 2), ("eta", -3))),
    ("param_7", (("delta_q", 0.5), ("delta_qp1", 1), ("lam_j", 1), ("mu", 2),
                 ("eta", -2))),
    ("param_8", (("delta_qp1", 1), ("mu", 3), ("eta", -1), ("lam_jp1", -1))),
)


def _log_values(led: ParamLedger) -> dict:
    """Natural logs of the ledger symbols; exact in theory mode."""
    if led.mode == "lab":
        return {s: math.log(getattr(led, s)) for s in
                ("lam_j", "lam_jp1", "mu", "eta", "delta_q", "delta_qp1", "delta_qp2")}
    lg = math.log(led.a)
    b, beta, tau, q, order = led.b, led.beta, led.tau, led.q, led.step_order
    vals = {
        "lam_j": b ** order,
        "lam_jp1": b ** (order + 1.0 / 6.0),
        "delta_q": -2.0 * beta * b ** q,
        "delta_qp1": -2.0 * beta * b ** (q + 1),
        "delta_qp2": -2.0 * beta * b ** (q + 2),
    }
    ratio = vals["delta_qp2"] - 0.5 * vals["delta_qp1"]
    vals["mu"] = ratio + (1.0 / 3.0 - 11.0 * tau) * vals["lam_jp1"]
    vals["eta"] = ratio + (1.0 - 11.0 * tau) * vals["lam_jp1"]
    return {k: v * lg for k, v in vals.items()}


def validate_inequalities(led: ParamLedger) -> dict:
    """Slack report for the parameter inequalities; reporting only.

    Each row gives log10 of both sides and the slack (positive = holds).
    Desk-scale lab parameters typically fail several rows; that is recorded,
    never fatal.
    """
    logs = _log_values(led)
    tau = led.tau
    ln10 = math.log(10.0)
    rhs = logs["delta_qp2"] - 10.0 * tau * logs["lam_jp1"]
    rows = []
    for name, factors in _INEQUALITIES:
        lhs = 0.0
        for sym, p in factors:
            power = (1.0 + tau) if p == "1+tau" else float(p)
            lhs += power * logs[sym]
        slack = (rhs - lhs) / ln10
        rows.append({"name": name, "log10_lhs": lhs / ln10, "log10_rhs": rhs / ln10,
                     "log10_slack": slack, "pass": bool(slack >= 0.0)})
    report = {"rows": rows, "all_pass": all(r["pass"] for r in rows)}
    if led.mode == "theory":
        ratio = beta_admissibility_ratio(led.b)
        report["beta_admissibility"] = ratio
        report["beta_admissible"] = bool(led.beta < ratio)
    return report


# ---------------------------------------------------------------------------
# cutoff partition


class PartitionBump:
    """1-d cutoff chi with support (-3/4, 3/4) and sum_k chi(y - k)^2 = 1.

    Default construction: chi = cos(pi/2 s(u)) with u the rescaled distance
    past |y| = 1/4 and s a C^3 polynomial ramp with s(u) + s(1-u) = 1, so
    the squared partition holds by cos^2 + sin^2 and the shoulders stay
    gentle (the frequency tails of everything built from cutoffs inherit
    this profile).  kind="poly" keeps the alternative even-bump-over-
    square-root normalization; its shoulders are much steeper because the
    high power leaves almost nothing at the half-cell crossover.
    """

    def __init__(self, kind="cos", power=4):
        if kind not in ("cos", "poly"):
            raise ConfigError(f"unknown cutoff kind {kind!r}")
        self.kind = kind
        self.power = int(power)

    # -- polynomial variant helpers
    def raw(self, y):
        core = np.clip(1.0 - (4.0 * np.asarray(y, dtype=np.float64) / 3.0) ** 2,
                       0.0, None)
        return core ** self.power

    def raw_deriv(self, y):
        y = np.asarray(y, dtype=np.float64)
        core = np.clip(1.0 - (4.0 * y / 3.0) ** 2, 0.0, None)
        return self.power * core ** (self.power - 1) * (-32.0 / 9.0) * y

    def _sum_sq(self, y):
        r = y - np.round(y)
        c0, cm, cp = self.raw(r), self.raw(r - 1.0), self.raw(r + 1.0)
        return r, c0, cm, cp, c0 ** 2 + cm ** 2 + cp ** 2

    @staticmethod
    def _ramp(u):
        return u ** 4 * (35.0 - 84.0 * u + 70.0 * u ** 2 - 20.0 * u ** 3)

    @staticmethod
    def _ramp_deriv(u):
        return 140.0 * u ** 3 * (1.0 - u) ** 3

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "poly":
            _, _, _, _, s = self._sum_sq(y)
            return self.raw(y) / np.sqrt(s)
        ay = np.abs(y)
        u = np.clip(2.0 * (ay - 0.25), 0.0, 1.0)
        val = np.cos(0.5 * np.pi * self._ramp(u))
        return np.where(ay < 0.75, val, 0.0)

    def deriv(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "poly":
            r, c0, cm, cp, s = self._sum_sq(y)
            ds = 2.0 * (c0 * self.raw_deriv(r) + cm * self.raw_deriv(r - 1.0)
                        + cp * self.raw_deriv(r + 1.0))
            return (self.raw_deriv(y) * s - 0.5 * self.raw(y) * ds) / s ** 1.5
        ay = np.abs(y)
        u = np.clip(2.0 * (ay - 0.25), 0.0, 1.0)
        inner = np.sin(0.5 * np.pi * self._ramp(u)) * self._ramp_deriv(u)
        val = -np.pi * inner * np.sign(y)
        return np.where(ay < 0.75, val, 0.0)


def _cross_rows(a, b):
    """Cross product for (3, N) stacks."""
    return np.stack([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("cannot normalize the zero vector")
    return v / n


def choose_direction(zeta, B_frozen, eps=1e-9):
    """Unit k orthogonal to both zeta and the frozen magnetic vector.

    Degenerate frozen vectors (zero, or parallel to zeta) fall back to the
    first Cartesian axis not parallel to zeta.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    c = np.cross(zeta, B_frozen)
    norm = np.linalg.norm(c)
    if norm > eps * max(np.linalg.norm(B_frozen), 1.0):
        return c / norm
    for axis in np.eye(3):
        c = np.cross(zeta, axis)
        n = np.linalg.norm(c)
        if n > 1e-8:
            return c / n
    raise ConfigError("cannot pick an oscillation direction")


@dataclasses.dataclass
class CutoffEntry:
    m: tuple
    l: float
    prime_index: int
    k: np.ndarray
    v_frozen: np.ndarray
    B_frozen: np.ndarray
    slab: tuple           # three (lo, hi) index ranges, hi exclusive
    t_slices: np.ndarray  # slice indices where the temporal factor can be nonzero


class CutoffInventory:
    """The active cutoffs, their phase data, and the shared amplitude field."""

    def __init__(self, grid: Grid, ledger: ParamLedger, zeta, gamma_mu: ScalarField,
                 entries, bump: PartitionBump, dt_gamma_mu=None):
        self.grid = grid
        self.ledger = ledger
        self.zeta = np.asarray(zeta, dtype=np.float64)
        self.gamma_mu = gamma_mu
        self.grad_gamma_mu = spectral.grad(gamma_mu)
        self.dt_gamma_mu = dt_gamma_mu
        self.dt_grad_gamma_mu = (spectral.grad(dt_gamma_mu)
                                 if dt_gamma_mu is not None else None)
        self.entries = entries
        self.bump = bump
        self._samplers = None
        self._build_tables()

    def __len__(self):
        return len(self.entries)

    def _build_tables(self):
        M = len(self.entries)
        led = self.ledger
        self.l_arr = np.empty(M)
        self.k_arr = np.empty((M, 3))
        self.v_arr = np.empty((M, 3))
        self.cross_arr = np.empty((M, 3))   # zeta x k_m
        self.phase_const = np.empty(M)      # l (eta - lam k . v_m) = d_t theta
        for i, e in enumerate(self.entries):
            self.l_arr[i] = e.l
            self.k_arr[i] = e.k
            self.v_arr[i] = e.v_frozen
            self.cross_arr[i] = np.cross(self.zeta, e.k)
            self.phase_const[i] = e.l * (led.eta - led.lam_jp1 * float(e.k @ e.v_frozen))
        if M:
            ms = np.array([e.m for e in self.entries])
            self.m_lo = ms.min(axis=0)
            dims = ms.max(axis=0) - self.m_lo + 1
            self.table = -np.ones(dims, dtype=np.int64)
            for i, e in enumerate(self.entries):
                self.table[tuple(np.array(e.m) - self.m_lo)] = i
            mu_t = led.temporal_cutoff_scale()
            tt = self.grid.times()
            self.chi_t = np.empty((M, self.grid.n_time))
            self.dchi_t = np.empty((M, self.grid.n_time))
            for i, e in enumerate(self.entries):
                arg = mu_t * tt - e.m[3]
                self.chi_t[i] = self.bump(arg)
                self.dchi_t[i] = mu_t * self.bump.deriv(arg)
        else:
            self.m_lo = np.zeros(4, dtype=np.int64)
            self.table = -np.ones((1, 1, 1, 1), dtype=np.int64)
            self.chi_t = np.zeros((0, self.grid.n_time))
            self.dchi_t = np.zeros((0, self.grid.n_time))

    # -- support bookkeeping --------------------------------------------------

    def active_slab(self, margin_cells=2):
        """Index ranges (per spatial axis) covering every cutoff slab."""
        if not self.entries:
            return None
        n = self.grid.n_space
        lo = [max(0, min(e.slab[a][0] for e in self.entries) - margin_cells)
              for a in range(3)]
        hi = [min(n, max(e.slab[a][1] for e in self.entries) + margin_cells)
              for a in range(3)]
        return tuple((lo[a], hi[a]) for a in range(3))

    def active_points(self, it=None):
        """Lattice points of the active slab: ((3, N) coords, flat indices)."""
        slab = self.active_slab()
        if slab is None:
            return None
        g = self.grid
        idx = [np.arange(lo, hi) for lo, hi in slab]
        I, J, K = np.meshgrid(*idx, indexing="ij")
        flat = (I * g.n_space + J) * g.n_space + K
        pts = np.stack([I.ravel() * g.h, J.ravel() * g.h, K.ravel() * g.h])
        return pts, flat.ravel()

    # -- amplitude access -----------------------------------------------------

    def _ensure_samplers(self):
        if self._samplers is None:
            fields = [self.gamma_mu] + list(self.grad_gamma_mu.components)
            self._samplers = [ScalarSampler(f, mode="cubic", refine=1) for f in fields]

    def amplitude_pack_at(self, pts, it):
        """gamma_mu and its gradient interpolated at off-lattice points."""
        self._ensure_samplers()
        vals = [s.eval(pts, it) for s in self._samplers]
        return vals[0], np.stack(vals[1:4])

    def amplitude_pack_grid(self, slab, it):
        sl = (it,) + tuple(slice(lo, hi) for lo, hi in slab)
        pack = {
            "gamma": self.gamma_mu.data[sl].reshape(-1),
            "grad": np.stack([c.data[sl].reshape(-1)
                              for c in self.grad_gamma_mu.components]),
        }
        if self.dt_gamma_mu is not None:
            pack["dt_gamma"] = self.dt_gamma_mu.data[sl].reshape(-1)
            pack["dt_grad"] = np.stack([c.data[sl].reshape(-1)
                                        for c in self.dt_grad_gamma_mu.components])
        return pack

    # -- the 16-offset accumulation kernel --------------------------------------

    def accumulate(self, pts, it, gamma, grad_gamma, requests, v_pts=None,
                   dt_gamma=None, dt_grad_gamma=None):
        """Sum the requested per-mode quantities over all active cutoffs.

        pts: (3, N) physical positions; gamma / grad_gamma: amplitude values
        at those positions.  Each point meets at most 16 cutoffs, found by
        visiting the 16 candidate lattice offsets and gathering entry data
        through the dense index table.

        Requests: "count", "chi_sq", "s" (sum a cos), "dzeta_s", "a_sq",
        "psi" (auxiliary-map displacement; "T" is its negation at the same
        points), "wc", "potential", "dt_wc", "sigma1_main".
        """
        led = self.ledger
        g = self.grid
        N = pts.shape[1]
        t = g.times()[it]
        out = {}
        for name in ("s", "dzeta_s", "a_sq", "chi_sq", "sigma1_main"):
            if name in requests:
                out[name] = np.zeros(N)
        if "count" in requests:
            out["count"] = np.zeros(N, dtype=np.int64)
        for name in ("psi", "wc", "potential", "dt_wc"):
            if name in requests:
                out[name] = np.zeros((3, N))
        if not self.entries:
            return out

        mu = led.mu
        mu_t = led.temporal_cutoff_scale()
        lam, eta = led.lam_jp1, led.eta
        zeta = self.zeta
        r = mu * pts
        rt = mu_t * t
        base_idx = np.floor(r + 0.75).astype(np.int64)
        mt_base = int(math.floor(rt + 0.75))
        dims = self.table.shape
        need_grad = any(n in requests for n in
                        ("psi", "wc", "dzeta_s", "dt_wc", "sigma1_main"))
        need_dt = any(n in requests for n in ("dt_wc", "sigma1_main"))
        if need_dt and dt_gamma is None:
            raise ConfigError("time-derivative terms need the mollified d/dt amplitude")
        if "sigma1_main" in requests and v_pts is None:
            raise ConfigError("sigma1 terms need velocity values at the points")

        for off in range(16):
            mt = mt_base - ((off >> 3) & 1)
            if abs(rt - mt) >= 0.75:
                continue
            rel_t = mt - self.m_lo[3]
            if rel_t < 0 or rel_t >= dims[3]:
                continue
            m_sp = base_idx - np.array([[off & 1], [(off >> 1) & 1], [(off >> 2) & 1]])
            y = r - m_sp
            inb = (np.abs(y) < 0.75).all(axis=0)
            rel = m_sp - self.m_lo[:3].reshape(3, 1)
            for a in range(3):
                inb &= (rel[a] >= 0) & (rel[a] < dims[a])
            if not inb.any():
                continue
            sel = np.nonzero(inb)[0]
            ids = self.table[rel[0, sel], rel[1, sel], rel[2, sel], rel_t]
            keep = ids >= 0
            if not keep.any():
                continue
            sel, ids = sel[keep], ids[keep]
            ysel = y[:, sel]

            c1, c2, c3 = self.bump(ysel[0]), self.bump(ysel[1]), self.bump(ysel[2])
            chi_sp = c1 * c2 * c3
            chi_t = self.chi_t[ids, it]
            chi = chi_sp * chi_t
            gam = gamma[sel]
            amp = SQRT2 * chi * gam

            l = self.l_arr[ids]
            kv = self.k_arr[ids].T
            cr = self.cross_arr[ids].T
            theta = (l * lam * (kv[0] * pts[0, sel] + kv[1] * pts[1, sel]
                                + kv[2] * pts[2, sel])
                     + self.phase_const[ids] * t)
            st, ct = np.sin(theta), np.cos(theta)

            if need_grad:
                gsp = np.stack([mu * self.bump.deriv(ysel[0]) * c2 * c3,
                                mu * c1 * self.bump.deriv(ysel[1]) * c3,
                                mu * c1 * c2 * self.bump.deriv(ysel[2])])
                gg = grad_gamma[:, sel]
                damp = SQRT2 * (gam * gsp * chi_t + chi * gg)
            if need_dt:
                dchi_t = self.dchi_t[ids, it]
                dgam = dt_gamma[sel]
                dt_amp = SQRT2 * (chi_sp * dchi_t * gam + chi * dgam)

            if "count" in requests:
                out["count"][sel] += (chi != 0.0)
            if "chi_sq" in requests:
                out["chi_sq"][sel] += chi ** 2
            if "s" in requests:
                out["s"][sel] += amp * ct
            if "a_sq" in requests:
                out["a_sq"][sel] += amp ** 2
            if "dzeta_s" in requests:
                out["dzeta_s"][sel] += (zeta[0] * damp[0] + zeta[1] * damp[1]
                                        + zeta[2] * damp[2]) * ct
            if "psi" in requests:
                swing = -(amp / (l * eta)) * st
                wiggle = _cross_rows(damp, cr) / (l ** 2 * eta * lam) * ct
                for a in range(3):
                    out["psi"][a][sel] += swing * zeta[a] + wiggle[a]
            if "wc" in requests:
                term = _cross_rows(damp, cr) / (l * lam) * st
                for a in range(3):
                    out["wc"][a][sel] += term[a]
            if "potential" in requests:
                term = (amp / (l * lam)) * st
                for a in range(3):
                    out["potential"][a][sel] += term * cr[a]
            if "sigma1_main" in requests:
                # (d_t a + v . grad a) cos - a sin l (eta + lam k.(v - v_m))
                vsel = v_pts[:, sel]
                v_dot = (vsel * damp).sum(axis=0)
                kdv = (kv * (vsel - self.v_arr[ids].T)).sum(axis=0)
                out["sigma1_main"][sel] += ((dt_amp + v_dot) * ct
                                            - amp * st * l * (eta + lam * kdv))
            if "dt_wc" in requests:
                dgg = dt_grad_gamma[:, sel]
                dt_damp = SQRT2 * (gsp * (dchi_t * gam + chi_t * dgam)
                                   + chi_sp * (dchi_t * gg + chi_t * dgg))
                term = (_cross_rows(dt_damp, cr) * st
                        + _cross_rows(damp, cr) * ct * self.phase_const[ids]) / (l * lam)
                for a in range(3):
                    out["dt_wc"][a][sel] += term[a]
        return out

    # -- partition diagnostics --------------------------------------------------

    def partition_deviation(self):
        """(max |sum chi_m^2 - 1| on supp gamma_mu, global max sum, max overlap)."""
        slab = self.active_slab()
        if slab is None:
            return 0.0, 0.0, 0
        pts, flat = self.active_points()
        zero = np.zeros(pts.shape[1])
        zgrad = np.zeros((3, pts.shape[1]))
        worst = 0.0
        global_max = 0.0
        overlap = 0
        for it in range(self.grid.n_time):
            res = self.accumulate(pts, it, zero, zgrad, {"chi_sq", "count"})
            gam_slab = self.gamma_mu.data[
                (it,) + tuple(slice(lo, hi) for lo, hi in slab)].reshape(-1)
            mask = gam_slab != 0.0
            if mask.any():
                worst = max(worst, float(np.abs(res["chi_sq"][mask] - 1.0).max()))
            if res["chi_sq"].size:
                global_max = max(global_max, float(res["chi_sq"].max()))
            if res["count"].size:
                overlap = max(overlap, int(res["count"].max()))
        return worst, global_max, overlap


def _support_slab(f: ScalarField):
    """Index bounding box of the nonzero samples; must not touch the boundary."""
    nz = f.data != 0.0
    if not nz.any():
        return None
    slabs = []
    for axis in range(3):
        proj = nz.any(axis=tuple(a for a in range(4) if a != axis + 1))
        idx = np.nonzero(proj)[0]
        if idx[0] == 0 or idx[-1] == f.grid.n_space - 1:
            raise SupportViolation(
                "support touches the periodic boundary; shrink it or grow the box")
        slabs.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(slabs)


def build_cutoffs(ledger: ParamLedger, gamma_mu: ScalarField, zeta, B_J: VectorField,
                  v_J: VectorField, dt_gamma_mu=None, bump_kind="cos",
                  bump_power=4) -> CutoffInventory:
    """Assemble the cutoff inventory over the support of the mollified amplitude.

    The phase coefficient l_m is the smallest prime root unused by any
    previously assigned overlapping cutoff, scanning the index set in
    lexicographic order; the 16-element root table always suffices for the
    product partition.  Frozen coefficients are the previous fields sampled
    at the cutoff centers; oscillation directions are orthogonal to zeta
    and to the frozen magnetic vector.
    """
    g = gamma_mu.grid
    bump = PartitionBump(kind=bump_kind, power=bump_power)
    zeta = _unit(np.asarray(zeta, dtype=np.float64))
    slab3 = _support_slab(gamma_mu)
    if slab3 is None:
        return CutoffInventory(g, ledger, zeta, gamma_mu, [], bump, dt_gamma_mu)
    mu = ledger.mu
    mu_t = ledger.temporal_cutoff_scale()
    h = g.h
    ranges = []
    for a in range(3):
        x_lo, x_hi = slab3[a][0] * h, (slab3[a][1] - 1) * h
        ranges.append(range(math.ceil(mu * x_lo - 0.75),
                            math.floor(mu * x_hi + 0.75) + 1))
    t_grid = g.times()
    nz = gamma_mu.data != 0.0

    entries = []
    for m0 in ranges[0]:
        for m1 in ranges[1]:
            for m2 in ranges[2]:
                lo_hi = []
                ok = True
                for a, mm in zip(range(3), (m0, m1, m2)):
                    lo = max(slab3[a][0], math.ceil((mm - 0.75) / (mu * h)))
                    hi = min(slab3[a][1], math.floor((mm + 0.75) / (mu * h)) + 1)
                    if hi <= lo:
                        ok = False
                        break
                    lo_hi.append((lo, hi))
                if not ok:
                    continue
                sl = tuple(slice(lo, hi) for lo, hi in lo_hi)
                for mt in range(math.ceil(-0.75),
                                math.floor(mu_t * g.t_final + 0.75) + 1):
                    tmask = np.abs(mu_t * t_grid - mt) < 0.75
                    if not tmask.any():
                        continue
                    tsl = np.nonzero(tmask)[0]
                    if not nz[(tsl,) + (slice(None),) * 0][:, sl[0], sl[1], sl[2]].any():
                        continue
                    entries.append(CutoffEntry(
                        m=(m0, m1, m2, mt), l=0.0, prime_index=-1, k=None,
                        v_frozen=None, B_frozen=None, slab=tuple(lo_hi),
                        t_slices=tsl))

    # lexicographic greedy prime-root assignment; conflicts are overlapping slabs
    entries.sort(key=lambda e: e.m)
    index_of = {e.m: i for i, e in enumerate(entries)}
    for i, e in enumerate(entries):
        used = set()
        for dm0 in (-1, 0, 1):
            for dm1 in (-1, 0, 1):
                for dm2 in (-1, 0, 1):
                    for dmt in (-1, 0, 1):
                        jdx = index_of.get((e.m[0] + dm0, e.m[1] + dm1,
                                            e.m[2] + dm2, e.m[3] + dmt))
                        if jdx is not None and jdx < i:
                            used.add(entries[jdx].prime_index)
        pick = next((p for p in range(16) if p not in used), None)
        if pick is None:
            raise PrimeExhausted(f"more than 16 mutually overlapping cutoffs at {e.m}")
        e.prime_index = pick
        e.l = math.sqrt(PRIMES_16[pick])

    # frozen coefficients at the cutoff centers (cubic in space, linear in time)
    v_samp = [ScalarSampler(c, mode="cubic", refine=1) for c in v_J.components]
    B_samp = [ScalarSampler(c, mode="cubic", refine=1) for c in B_J.components]
    for e in entries:
        centre = (np.array(e.m[:3], dtype=np.float64) / mu).reshape(3, 1)
        t_val = min(max(e.m[3] / mu_t, 0.0), g.t_final)
        ft = t_val / g.dt
        i0 = min(int(math.floor(ft)), g.n_time - 2)
        w = ft - i0
        e.v_frozen = np.array([(1 - w) * s.eval(centre, i0)[0]
                               + w * s.eval(centre, i0 + 1)[0] for s in v_samp])
        e.B_frozen = np.array([(1 - w) * s.eval(centre, i0)[0]
                               + w * s.eval(centre, i0 + 1)[0] for s in B_samp])
        e.k = choose_direction(zeta, e.B_frozen)
    return CutoffInventory(g, ledger, zeta, gamma_mu, entries, bump, dt_gamma_mu)


# ---------------------------------------------------------------------------
# auxiliary map and perturbations


class Psi0Spec:
    """Evaluator bundle for the auxiliary oscillatory map and its inverse.

    Amplitudes are interpolated (tricubic spline), phases evaluated in
    closed form; the fixed-point inverter consumes exactly these
    evaluators, so its certificate measures the true inversion defect of
    the map it inverted.
    """

    def __init__(self, inventory: CutoffInventory):
        self.inv = inventory
        self.grid = inventory.grid

    def active_points(self, it):
        return self.inv.active_points(it)

    def _slice_index(self, t):
        return int(round(t / self.grid.dt))

    def displacement(self, F, t):
        it = self._slice_index(t)
        gam, grad = self.inv.amplitude_pack_at(np.mod(F, self.grid.box_len), it)
        return self.inv.accumulate(F, it, gam, grad, {"psi"})["psi"]

    def t_displacement(self, F, t):
        # the fixed-point operator's correction is the sign-flipped
        # auxiliary-map displacement evaluated at the iterate
        return -self.displacement(F, t)

    def phase_metric(self, D):
        if D.size == 0 or len(self.inv) == 0:
            return 0.0
        led = self.inv.ledger
        K, L = self.inv.k_arr, self.inv.l_arr
        best = 0.0
        step = max(1, 2 ** 24 // max(D.shape[1], 1))
        for lo in range(0, K.shape[0], step):
            proj = np.abs(K[lo:lo + step] @ D)
            best = max(best, float((L[lo:lo + step, None] * proj).max()))
        return best * led.lam_jp1 / led.mu

    def contraction_estimate(self):
        """K * amplitude * mu / eta with the realized amplitude bound.

        The ledger's delta^(1/2) is only the budget cap; the amplitudes
        actually built can sit far below it (energy window position), and
        the iteration contracts at their scale.
        """
        led = self.inv.ledger
        amp = min(math.sqrt(led.delta_qp1),
                  SQRT2 * self.inv.gamma_mu.max_abs())
        return led.fp_contraction_const * amp * led.mu / led.eta


def sample_psi0(inventory: CutoffInventory) -> MapField:
    """The auxiliary map sampled on the lattice (exact amplitude values)."""
    g = inventory.grid
    comps = [np.zeros(g.shape) for _ in range(3)]
    slab = inventory.active_slab()
    if slab is not None:
        pts, flat = inventory.active_points()
        for it in range(g.n_time):
            pack = inventory.amplitude_pack_grid(slab, it)
            res = inventory.accumulate(pts, it, pack["gamma"], pack["grad"], {"psi"})
            for a in range(3):
                comps[a][it].flat[flat] = res["psi"][a]
    return MapField(g, VectorField(g, comps))


def build_psi0(inventory: CutoffInventory):
    """(Psi0Spec, sampled MapField) for the auxiliary map."""
    return Psi0Spec(inventory), sample_psi0(inventory)


def build_w0_wc(inventory: CutoffInventory):
    """The explicit perturbations and their curl-representation certificate.

    w0 = sum a_m zeta cos(theta_m); wc carries the amplitude-gradient
    correction that makes w0 + wc a curl.  The certificate compares the
    assembled sum against the spectral curl of the sampled potential;
    the curl route itself is solenoidal to machine precision.
    """
    g = inventory.grid
    zeta = inventory.zeta
    w0 = [np.zeros(g.shape) for _ in range(3)]
    wc = [np.zeros(g.shape) for _ in range(3)]
    pot = [np.zeros(g.shape) for _ in range(3)]
    slab = inventory.active_slab()
    if slab is not None:
        pts, flat = inventory.active_points()
        for it in range(g.n_time):
            pack = inventory.amplitude_pack_grid(slab, it)
            res = inventory.accumulate(pts, it, pack["gamma"], pack["grad"],
                                       {"s", "wc", "potential"})
            for a in range(3):
                w0[a][it].flat[flat] = res["s"] * zeta[a]
                wc[a][it].flat[flat] = res["wc"][a]
                pot[a][it].flat[flat] = res["potential"][a]
    w0f, wcf, potf = VectorField(g, w0), VectorField(g, wc), VectorField(g, pot)
    curl_pot = spectral.curl(potf)
    cert = {
        "curl_representation_defect": (curl_pot - (w0f + wcf)).max_abs(),
        "div_w0_wc": spectral.div(w0f + wcf).max_abs(),
        "div_curl_potential": spectral.div(curl_pot).max_abs(),
    }
    return w0f, wcf, cert


def material_phase_defect(inventory: CutoffInventory, entry_index: int,
                          v_J: VectorField) -> ScalarField:
    """d_t theta + v_J . grad theta - l eta on the entry's slab, exact.

    Equals l lam k . (v_J - v_frozen); identically zero when the velocity
    matches the frozen coefficient.
    """
    e = inventory.entries[entry_index]
    led = inventory.ledger
    g = inventory.grid
    out = np.zeros(g.shape)
    sl = tuple(slice(lo, hi) for lo, hi in e.slab)
    for it in e.t_slices:
        acc = np.zeros(tuple(hi - lo for lo, hi in e.slab))
        for a in range(3):
            acc += e.k[a] * (v_J.components[a].data[(it,) + sl] - e.v_frozen[a])
        out[(it,) + sl] = e.l * led.lam_jp1 * acc
    return ScalarField(g, out, check=False)
