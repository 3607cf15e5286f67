"""Tolerances and stage/step options with their documented defaults.

Every tolerance is configurable; the defaults below are the documented
reference values.  Grid-dependent tolerances (residual, helicity drift)
are exposed as callables of the grid so the defaults stay honest across
resolutions.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigError


@dataclasses.dataclass
class Tolerances:
    # relative unless stated otherwise
    div_tol: float = 1e-6            # divergence defect / C^1 estimate
    mean_tol: float = 1e-8           # slice means feeding spectral solves
    resid_c0: float = 0.05           # residual floor (absolute)
    resid_c1: float = 12.0           # residual dt^2 coefficient (absolute)
    moser_tol: float = 1e-3          # |det - (1 + f_c)| sup, absolute
    fp_tol_rel: float = 1e-10        # fixed-point stop, relative to box_len
    inv_tol_rel: float = 1e-4        # composition defect cap, relative to box_len
    moment_tol: float = 1e-8         # killing moments / (sup * box volume)
    support_tol: float = 1e-4        # tail sup / field sup outside dilated box
    helicity_c: float = 4.1          # helicity drift model coefficient
    energy_tol: float = 0.10         # energy bookkeeping, relative to pumped energy

    def fp_tol(self, grid):
        return self.fp_tol_rel * grid.box_len

    def inv_tol(self, grid):
        return self.inv_tol_rel * grid.box_len

    def resid_tol(self, grid):
        """Residual cap: discretization floor plus the dt^2 time-derivative term."""
        return self.resid_c0 + self.resid_c1 * grid.dt ** 2

    def helicity_tol(self, grid):
        """Relative drift cap: interpolation-limited, fourth order in h.

        Documented reference points: 1e-3 at n_space = 64, 1e-4 at 128 on
        the shipped stage benchmark (box 2 pi).
        """
        return self.helicity_c * (64.0 / grid.n_space) ** 4 * 1e-3 / 4.1

    @classmethod
    def from_dict(cls, d: dict) -> "Tolerances":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**d)


@dataclasses.dataclass
class StageOptions:
    tol: Tolerances = dataclasses.field(default_factory=Tolerances)
    n_s: int = 16                    # volume-correction flow substeps
    interp_refine: int = 2           # spectral refinement for steep compositions
    bump_kind: str = "cos"           # cutoff profile family
    bump_power: int = 4              # exponent of the "poly" profile
    mollify_scale_t: float | None = None   # time radius; default min(1/mu, 0.45 T)
    keep_pieces: bool = True
    mode: str = "full"               # "full" or "transport" (maps + B only)
    enforce_moments: bool = True
    fp_max_iter: int = 200
    placement_gap: float = 0.08      # gap between grown support and the patch
    momentum_mode: str = "dipole"    # "dipole" or "copy" (see angular_correction)
    rim_allowance: float = 0.55      # amplitude may ride this far up the rim

    def __post_init__(self):
        if self.mode not in ("full", "transport"):
            raise ConfigError(f"unknown stage mode {self.mode!r}")
        if self.momentum_mode not in ("dipole", "copy"):
            raise ConfigError(f"unknown momentum mode {self.momentum_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "StageOptions":
        d = dict(d)
        tol = d.pop("tolerances", None)
        known = {f.name for f in dataclasses.fields(cls)} - {"tol"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown stage option keys: {sorted(unknown)}")
        out = cls(**d)
        if tol is not None:
            out.tol = Tolerances.from_dict(tol)
        return out
