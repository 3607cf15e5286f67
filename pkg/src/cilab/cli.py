"""Batch entry point: configuration, subcommands, checkpointing, and the
verification runner.

Config files are strict JSON: nested sections with typed scalars, unknown
keys rejected.  Subcommands: stage, step, scheme, verify, probe, report.
Exit codes: 0 success, 2 certificate failure, 3 configuration error,
4 numerical guard.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import blocks, parallel
from .diagnostics import RunReport, conserved_series, stationary_phase_probe
from .errors import CertificateFail, CilabError, ConfigError, exit_code
from .fields import Grid, ScalarField
from .operators import KillingBasis
from .options import StageOptions, Tolerances
from .scheme import (GeometricBasis, Subsolution, default_energy_profile,
                     initial_subsolution, run_step, step_amplitudes)
from .stage import run_stage
from .synth import radial_bump
from .verify import run_verify, verify_passed

_GRID_KEYS = {"n_space", "n_time", "box_len", "t_final"}
_INIT_KEYS = {"preset", "epsilon", "s", "amplitude", "r_support", "path"}
_RUN_KEYS = {"steps", "out_dir", "seed", "threads", "label"}
_TOP_KEYS = {"grid", "ledger", "tolerances", "initial", "run", "stage_options"}


@dataclasses.dataclass
class RunConfig:
    grid: dict
    ledger: dict
    tolerances: dict
    initial: dict
    run: dict
    stage_options: dict

    @classmethod
    def parse(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        grid = raw.get("grid", {})
        if set(grid) - _GRID_KEYS:
            raise ConfigError(f"unknown grid keys: {sorted(set(grid) - _GRID_KEYS)}")
        init = raw.get("initial", {})
        if set(init) - _INIT_KEYS:
            raise ConfigError(f"unknown initial keys: {sorted(set(init) - _INIT_KEYS)}")
        run = raw.get("run", {})
        if set(run) - _RUN_KEYS:
            raise ConfigError(f"unknown run keys: {sorted(set(run) - _RUN_KEYS)}")
        return cls(grid=grid, ledger=raw.get("ledger", {}),
                   tolerances=raw.get("tolerances", {}), initial=init,
                   run=run, stage_options=raw.get("stage_options", {}))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.parse(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def build(self):
        grid = Grid(self.grid.get("n_space", 32), self.grid.get("n_time", 5),
                    self.grid.get("box_len", 2 * np.pi),
                    self.grid.get("t_final", 1.0))
        ledger = blocks.build_ledger(self.ledger, grid)
        opts = StageOptions.from_dict(self.stage_options)
        if self.tolerances:
            opts.tol = Tolerances.from_dict(self.tolerances)
        return grid, ledger, opts


def _initial(cfg: RunConfig, grid, ledger):
    init = dict(cfg.initial)
    path = init.pop("path", None)
    if path is not None:
        sub = Subsolution.load(path, grid)
        return sub, default_energy_profile(sub, ledger)
    return initial_subsolution(grid, ledger,
                               preset=init.get("preset", "abc"),
                               epsilon=init.get("epsilon", 0.5),
                               s=init.get("s", 0.1),
                               amplitude=init.get("amplitude", 0.2),
                               r_support=init.get("r_support"))


def _gate(certs: dict, opts: StageOptions, grid) -> list:
    """Certificate thresholds that decide the exit code."""
    tol = opts.tol
    rules = [
        ("residual_new", tol.resid_tol(grid)),
        ("helicity_drift", tol.helicity_tol(grid)),
        ("div_v_new", tol.div_tol),
        ("div_B_new", tol.div_tol),
        ("inverse_defect_fwd", tol.inv_tol(grid)),
        ("killing_moments_scaled", tol.moment_tol),
    ]
    failures = []
    for key, cap in rules:
        if key in certs and certs[key] > cap:
            failures.append(f"{key} = {certs[key]:.3e} > {cap:.3e}")
    if "energy_defect" in certs:
        cap = tol.energy_tol * max(certs.get("energy_pumped", 0.0), 1e-300)
        if certs["energy_defect"] > cap:
            failures.append(f"energy_defect = {certs['energy_defect']:.3e} > {cap:.3e}")
    return failures


def _out_dir(cfg: RunConfig, args) -> str:
    out = args.out or cfg.run.get("out_dir", "cilab-out")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_stage(cfg: RunConfig, args) -> int:
    grid, ledger, opts = cfg.build()
    out = _out_dir(cfg, args)
    report = RunReport(cfg.to_dict())
    report.set_ledger(ledger)
    report.set_inequalities(blocks.validate_inequalities(ledger))
    sub, e_profile = _initial(cfg, grid, ledger)
    basis6 = GeometricBasis()
    rho, chi_q, gammas, amp_cert = step_amplitudes(sub, e_profile, ledger, basis6)
    t0 = time.perf_counter()
    result = run_stage(sub, gammas[0], basis6.zetas[0], ledger, opts)
    wall = time.perf_counter() - t0
    report.add_stage(f"stage_{sub.q}_0", _plain_certs(result.certificates))
    report.set_series(conserved_series(result.v_new, result.B_new))
    path = report.save(out)
    new = Subsolution(v=result.v_new, B=result.B_new, p=result.p_new,
                      R=result.R_new, support=sub.support, q=sub.q, j=1)
    new.save(os.path.join(out, f"{sub.q}_1.cilab"))
    failures = _gate(result.certificates, opts, grid)
    print(f"stage complete in {wall:.1f}s; report: {path}")
    for f in failures:
        print(f"certificate failure: {f}")
    return 2 if failures else 0


def cmd_step(cfg: RunConfig, args) -> int:
    grid, ledger, opts = cfg.build()
    out = _out_dir(cfg, args)
    report = RunReport(cfg.to_dict())
    report.set_ledger(ledger)
    report.set_inequalities(blocks.validate_inequalities(ledger))
    sub, e_profile = _initial(cfg, grid, ledger)
    t0 = time.perf_counter()
    new = run_step(sub, e_profile, ledger, opts)
    wall = time.perf_counter() - t0
    failures = []
    for st in new.history[-1]["stages"]:
        report.add_stage(f"stage_{sub.q}_{st['j']}", st["certificates"])
        failures += [f"j={st['j']}: {f}"
                     for f in _gate(st["certificates"], opts, grid)]
    report.set_series(conserved_series(new.v, new.B))
    path = report.save(out)
    new.save(os.path.join(out, f"{new.q}_0.cilab"))
    print(f"step complete in {wall:.1f}s; report: {path}")
    for f in failures:
        print(f"certificate failure: {f}")
    return 2 if failures else 0


def cmd_scheme(cfg: RunConfig, args) -> int:
    grid, ledger, opts = cfg.build()
    out = _out_dir(cfg, args)
    report = RunReport(cfg.to_dict())
    report.set_ledger(ledger)
    report.set_inequalities(blocks.validate_inequalities(ledger))
    if args.resume:
        sub = Subsolution.load(args.resume, grid)
        e_profile = default_energy_profile(sub, ledger)
    else:
        sub, e_profile = _initial(cfg, grid, ledger)
    steps = int(cfg.run.get("steps", 1))
    failures = []
    for _ in range(steps):
        sub = run_step(sub, e_profile, ledger, opts)
        sub.save(os.path.join(out, f"{sub.q}_0.cilab"))
        for st in sub.history[-1]["stages"]:
            report.add_stage(f"stage_{sub.q - 1}_{st['j']}", st["certificates"])
            failures += _gate(st["certificates"], opts, grid)
        e_profile = default_energy_profile(sub, ledger)
    report.set_series(conserved_series(sub.v, sub.B))
    path = report.save(out)
    print(f"scheme complete after {steps} step(s); report: {path}")
    for f in failures:
        print(f"certificate failure: {f}")
    return 2 if failures else 0


def cmd_verify(cfg: RunConfig, args) -> int:
    n = cfg.grid.get("n_space", 16)
    nt = cfg.grid.get("n_time", 5)
    checks = run_verify(n_space=n, n_time=nt)
    ok = verify_passed(checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return 0 if ok else 2


def cmd_probe(cfg: RunConfig, args) -> int:
    grid, _, _ = cfg.build()
    out = _out_dir(cfg, args)
    c = radial_bump(grid, grid.center, 0.2 * grid.box_len, 0.35 * grid.box_len)
    res = stationary_phase_probe(c, np.array([1.0, 0.0, 0.0]))
    with open(os.path.join(out, "probe.tsv"), "w") as fh:
        fh.write("lam\tvalue\n")
        for row in res["table"]:
            fh.write(f"{row['lam']:.17g}\t{row['value']:.17g}\n")
    print(f"probe slope {res['slope']:.3f} status {res['status']}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    path = os.path.join(out, "report.json")
    if not os.path.exists(path):
        raise ConfigError(f"no report at {path}")
    with open(path) as fh:
        data = json.load(fh)
    stages = data.get("stages", [])
    print(f"schema {data.get('schema')}; {len(stages)} stage blocks")
    for st in stages:
        certs = st.get("certificates", {})
        keys = ("residual_new", "helicity_drift", "E_sup", "moser_det")
        brief = ", ".join(f"{k}={certs[k]:.3e}" for k in keys if k in certs)
        print(f"  {st['label']}: {brief}")
    return 0


def _plain_certs(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        elif isinstance(v, np.ndarray):
            out[k] = v.tolist()
        else:
            out[k] = v
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cilab",
                                     description="oscillatory-stage laboratory")
    parser.add_argument("command",
                        choices=["stage", "step", "scheme", "verify", "probe",
                                 "report"])
    parser.add_argument("--config", default=None, help="JSON config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--resume", default=None, help="checkpoint to resume from")
    args = parser.parse_args(argv)
    try:
        if args.config:
            cfg = RunConfig.load(args.config)
        else:
            cfg = RunConfig.parse({})
        threads = args.threads or cfg.run.get("threads")
        if threads:
            parallel.set_workers(int(threads))
        handler = {
            "stage": cmd_stage, "step": cmd_step, "scheme": cmd_scheme,
            "verify": cmd_verify, "probe": cmd_probe, "report": cmd_report,
        }[args.command]
        return handler(cfg, args)
    except CilabError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return exit_code(e)


if __name__ == "__main__":
    raise SystemExit(main())
