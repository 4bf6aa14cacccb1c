"""Command-line front end: ``solve``, ``simulate``, ``scaling`` and ``mesh``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .assembly import DepthCollapseError, InvalidElementError
from .cases import (PRESETS, CasePreset, ScalingConfig, get_preset, loglog_slope, run_scaling_sweep,
                    solve_problem)
from .direct import NonSPDError
from .fnpf import ConfigError, dispersion_omega
from .mesh import InvalidMeshError, build_dofmap, read_mesh, surface_integral, write_mesh
from .multigrid import InvalidPlanError, SmootherBuildError
from .solvers import BreakdownError, solve, time_spmv, work_units

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
NUMERICAL_ERRORS = (DepthCollapseError, InvalidElementError, BreakdownError, NonSPDError, SmootherBuildError,
                    FloatingPointError, np.linalg.LinAlgError)
CONFIG_ERRORS = (ConfigError, InvalidMeshError, InvalidPlanError)


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


@dataclass
class RunConfig:
    case: str
    overrides: dict = field(default_factory=dict)
    out: Path = Path("out")
    seed: int = 0

    OVERRIDE_KEYS = ("method", "rtol", "atol", "imax", "strategy", "overlap", "nu1", "nu2", "dt", "steps")

    def __post_init__(self):
        for key in self.overrides:
            if key not in self.OVERRIDE_KEYS:
                raise ConfigError(f"{key}: unknown override")

    def load(self) -> CasePreset:
        """Preset by name, or a YAML config file, with the command-line overrides applied."""
        if self.case in PRESETS:
            preset = get_preset(self.case)
        else:
            path = Path(self.case)
            if not path.is_file():
                raise ConfigError(f"case: {self.case!r} is neither a preset ({', '.join(sorted(PRESETS))}) "
                                  f"nor a config file")
            preset = CasePreset.from_yaml(path.read_text())
        return apply_overrides(preset, self.overrides)


def parse_overlap(text: str) -> dict:
    if text == "refined":
        return {"overlap_mode": "refined"}
    if text.startswith("fixed:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            n = -1
        if n >= 0:
            return {"overlap_mode": "fixed", "overlap": n}
    raise ConfigError(f"overlap: expected fixed:N or refined, got {text!r}")


def apply_overrides(preset: CasePreset, ov: dict) -> CasePreset:
    solver_keys = {"method": "method", "rtol": "rtol", "atol": "atol", "imax": "i_max", "nu1": "nu1", "nu2": "nu2"}
    changes = {solver_keys[k]: v for k, v in ov.items() if k in solver_keys and v is not None}
    try:
        solver = replace(preset.solver, **changes)
    except ValueError as exc:
        key = next(iter(changes), "solver")
        raise ConfigError(f"{key}: {exc}") from None
    preset = replace(preset, solver=solver)
    if ov.get("strategy") is not None:
        preset.strategy = ov["strategy"]
    if ov.get("overlap") is not None:
        for k, v in parse_overlap(ov["overlap"]).items():
            setattr(preset, k, v)
    if ov.get("dt") is not None:
        preset.dt = float(ov["dt"])
    if ov.get("steps") is not None:
        if ov["steps"] < 0:
            raise ConfigError("steps: must be >= 0")
        preset.t_end = ov["steps"] * preset.dt
    preset.validate()
    return preset


# ---------------------------------------------------------------------------
# commands


def cmd_solve(rc: RunConfig) -> int:
    preset = rc.load()
    system, hierarchy, _, _ = solve_problem(preset)
    u, rep = solve(system, hierarchy, preset.solver)
    work_units(rep, system)
    rc.out.mkdir(parents=True, exist_ok=True)
    (rc.out / "report.json").write_text(rep.to_json())
    coords = system.dofmap.coords
    write_csv(rc.out / "solution.csv", ["x", "sigma", "phi"], zip(coords[:, 0], coords[:, 1], u))
    print(f"{rep.method}: {rep.iterations} iterations, residual {rep.residuals[-1]:.3e}, "
          f"converged={rep.converged}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def simulation_summary(preset: CasePreset, sim, eta0) -> dict:
    """Run diagnostics; mass drift is relative to the initial integral of |eta| (domain length if at rest)."""
    h = sim.history
    mass = np.asarray(h["mass"])
    energy = np.asarray(h["energy"])
    mass_scale = surface_integral(sim.dofmap, np.abs(eta0))
    mass_scale = mass_scale if mass_scale > 0 else preset.mesh.x_max - preset.mesh.x_min
    duration = h["t"][-1] - h["t"][0]
    period = _period(preset)
    periods = duration / period if (period and duration > 0) else 1.0
    recs = sim.stage.records
    its = np.array([r.iterations for r in recs], dtype=float)
    return {
        "mean_iterations": float(its.mean()) if len(its) else 0.0,
        "n_solves": len(recs),
        "all_converged": bool(all(r.converged for r in recs)),
        "steps": len(h["t"]) - 1,
        "t_end": float(h["t"][-1]),
        "max_abs_eta": float(np.max(np.abs(np.asarray(h["gauges"])))) if len(h["gauges"][0]) else 0.0,
        "mass_drift": float(np.max(np.abs(mass - mass[0])) / mass_scale),
        "mass_drift_per_period": float(np.max(np.abs(mass - mass[0])) / mass_scale / max(periods, 1.0)),
        "energy_drift": float(np.max(np.abs(energy - energy[0])) / energy[0]) if energy[0] > 0 else 0.0,
    }


def _period(preset: CasePreset) -> float | None:
    for z in preset.zones:
        if z.get("wave"):
            return float(z["wave"]["params"]["period"])
    if preset.initial.get("kind") == "standing":
        k = 2 * np.pi / float(preset.initial["wavelength"])
        return 2 * np.pi / dispersion_omega(k, float(preset.mesh.bathymetry.get("depth", 1.0)))
    return None


def cmd_simulate(rc: RunConfig) -> int:
    preset = rc.load()
    if rc.overrides.get("rtol") is not None:
        tolerances = [preset.solver.rtol]
    else:
        tolerances = [float(t) for t in preset.output.get("tolerances", [preset.solver.rtol])]
    rc.out.mkdir(parents=True, exist_ok=True)
    summary = {"case": preset.name, "strategy": preset.strategy, "method": preset.solver.method,
               "nu": [preset.solver.nu1, preset.solver.nu2], "mean_iterations": {}, "runs": {}}
    stats_rows, converged, final = [], True, None
    for tol in sorted(tolerances, reverse=True):
        run = replace(preset, solver=replace(preset.solver, rtol=tol))
        sim = run.build_simulation()
        eta0 = sim.state.eta.copy()
        spmv = time_spmv(sim.stage.system.A)
        sim.run(run.n_steps)
        for n, r in enumerate(sim.stage.records):
            q = r.q if np.isfinite(r.q) else float("nan")
            stats_rows.append([tol, n, r.t, r.iterations, q, r.wall_time, r.wall_time / spmv, int(r.converged)])
        s = simulation_summary(run, sim, eta0)
        key = "%.0e" % tol
        summary["mean_iterations"][key] = s["mean_iterations"]
        summary["runs"][key] = s
        converged &= s["all_converged"]
        final = sim
    write_csv(rc.out / "solver_stats.csv", ["rtol", "solve", "t", "iterations", "q", "seconds", "work_units",
                                            "converged"], stats_rows)
    gauges = np.asarray(final.history["gauges"])
    write_csv(rc.out / "gauges.csv", ["t"] + ["eta_%s" % fmt(float(x)) for x in final.gauges],
              ([t, *g] for t, g in zip(final.history["t"], gauges)))
    summary.update({k: v for k, v in summary["runs"]["%.0e" % min(tolerances)].items()
                    if k != "mean_iterations"})
    (rc.out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary["mean_iterations"]))
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_scaling(args, rc: RunConfig) -> int:
    cfg = ScalingConfig(rtol=args.rtol if args.rtol is not None else 1e-8,
                        nu1=args.nu1 if args.nu1 is not None else 3,
                        nu2=args.nu2 if args.nu2 is not None else 3, repeats=args.repeats)
    scales = _int_list(args.scales, "scales")
    orders = [tuple(_int_list(o, "orders")) for o in args.orders.split(";")]
    if any(len(o) != 2 or min(o) < 1 for o in orders):
        raise ConfigError(f"orders: expected pairs like '5,3;9,7', got {args.orders!r}")
    modes = ("fixed", "refined") if args.overlap is None else (parse_overlap(args.overlap)["overlap_mode"],)
    if args.overlap and args.overlap.startswith("fixed:"):
        cfg.overlap = parse_overlap(args.overlap)["overlap"]
    rows = run_scaling_sweep(scales, orders, cfg, modes)
    rc.out.mkdir(parents=True, exist_ok=True)
    cols = ["dof", "seconds", "q", "P_x", "P_sigma", "n_elements", "overlap_mode", "iterations"]
    write_csv(rc.out / "scaling.csv", cols, ([r[c] for c in cols] for r in rows))
    for o in orders:
        for m in modes:
            sel = [r for r in rows if (r["P_x"], r["P_sigma"]) == o and r["overlap_mode"] == m]
            if len(sel) > 1:
                print(f"P={o} {m}: slope {loglog_slope([r['dof'] for r in sel], [r['seconds'] for r in sel]):.3f}")
    return EXIT_OK


def cmd_mesh(args, rc: RunConfig) -> int:
    if args.check:
        mesh = read_mesh(args.check)
        print(f"{args.check}: {mesh.n_x} x {mesh.n_sigma} elements, {len(mesh.vertices)} vertices")
        return EXIT_OK
    preset = rc.load()
    mesh, _ = preset.build_mesh()
    rc.out.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, rc.out / "mesh.txt")
    dm = build_dofmap(mesh, *preset.orders)
    print(f"wrote {rc.out / 'mesh.txt'} ({mesh.n_elements} elements, {dm.n_dofs} dofs at P={preset.orders})")
    return EXIT_OK


def _int_list(text: str, key: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavemg", description="sigma-transformed FNPF wave model with p-multigrid")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, case_required=True):
        sp.add_argument("--case", required=False, default=None, help="preset name or YAML config path")
        sp.add_argument("--config", default=None, help="YAML config path (alternative to --case)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--method", choices=["mg", "pdc", "pcg", "direct"])
        sp.add_argument("--rtol", type=float)
        sp.add_argument("--atol", type=float)
        sp.add_argument("--imax", type=int)
        sp.add_argument("--strategy", type=int, choices=[1, 2, 3])
        sp.add_argument("--nu1", type=int)
        sp.add_argument("--nu2", type=int)
        sp.add_argument("--overlap", help="fixed:N or refined")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--steps", type=int, help="override the number of time steps")

    common(sub.add_parser("solve", help="one steady Laplace solve"))
    common(sub.add_parser("simulate", help="time-domain run"))
    sc = sub.add_parser("scaling", help="DOF / order sweep")
    common(sc)
    sc.add_argument("--scales", default="6,8,11,16,22", help="mesh scale factors s (4s x 3s elements)")
    sc.add_argument("--orders", default="5,3", help="semicolon-separated order pairs, e.g. '5,3;9,7'")
    sc.add_argument("--repeats", type=int, default=3)
    ms = sub.add_parser("mesh", help="write a preset mesh or check a mesh file")
    common(ms)
    ms.add_argument("--check", default=None, help="mesh file to parse and validate")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        case = args.config or args.case
        if case is None and args.command in ("solve", "simulate") or (args.command == "mesh" and
                                                                         not args.check and case is None):
            raise ConfigError("case: --case or --config is required")
        ov = {k: getattr(args, k) for k in RunConfig.OVERRIDE_KEYS if getattr(args, k, None) is not None}
        rc = RunConfig(case or "", ov, args.out, args.seed)
        if args.command == "solve":
            return cmd_solve(rc)
        if args.command == "simulate":
            return cmd_simulate(rc)
        if args.command == "scaling":
            return cmd_scaling(args, rc)
        return cmd_mesh(args, rc)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    threads = os.environ.get("WAVEMG_THREADS")
    if threads:
        try:
            n = int(threads)
        except ValueError:
            print(f"config error: WAVEMG_THREADS: expected an integer, got {threads!r}", file=sys.stderr)
            return EXIT_CONFIG
        with threadpool_limits(limits=max(1, n)):
            return run(argv)
    return run(argv)
