"""Submerged-bar run: mean PCG iterations per Laplace solve for each update strategy and tolerance.

Usage: python scripts/run_bar.py [--steps N] [--strategies 1,2,3] [--tolerances 1e-4,1e-5,1e-6,1e-7]
The full run is 1125 steps; every (strategy, tolerance) pair is a separate simulation.
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from wavemg.cases import preset_submerged_bar
from wavemg.cli import write_csv


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=None, help="number of time steps (default: full run)")
    p.add_argument("--strategies", default="1,2,3")
    p.add_argument("--tolerances", default="1e-4,1e-5,1e-6,1e-7")
    p.add_argument("--freeze-operator", choices=["yes", "no"], default="yes",
                   help="strategy I: freeze the solved operator too (yes) or only the preconditioner (no)")
    p.add_argument("--out", type=Path, default=Path("out/bar"))
    args = p.parse_args(argv)

    preset = preset_submerged_bar()
    preset.freeze_operator = args.freeze_operator == "yes"
    steps = args.steps if args.steps is not None else preset.n_steps
    strategies = [int(s) for s in args.strategies.split(",")]
    tolerances = [float(t) for t in args.tolerances.split(",")]
    args.out.mkdir(parents=True, exist_ok=True)

    table, rows = {}, []
    for strategy in strategies:
        for tol in tolerances:
            run = replace(preset, solver=replace(preset.solver, rtol=tol))
            sim = run.build_simulation(strategy=strategy)
            t0 = time.perf_counter()
            status = "ok"
            try:
                sim.run(steps)
            except ArithmeticError as exc:  # depth collapse under a frozen operator
                status = f"{type(exc).__name__} at t = {sim.state.t:.2f} s"
            its = np.array([r.iterations for r in sim.stage.records], dtype=float)
            wall = time.perf_counter() - t0
            table[f"{strategy}:{tol:.0e}"] = {"mean_iterations": float(its.mean()), "solves": len(its),
                                              "seconds": wall, "status": status}
            rows.append([strategy, tol, float(its.mean()), len(its), wall, status])
            print(f"strategy {strategy}  rtol {tol:.0e}  mean iterations {its.mean():.3f}  "
                  f"solves {len(its)}  {wall:.1f} s  {status}", flush=True)
    write_csv(args.out / "bar_iterations.csv", ["strategy", "rtol", "mean_iterations", "solves", "seconds",
                                                "status"], rows)
    (args.out / "bar_iterations.json").write_text(json.dumps({"steps": steps, "runs": table}, indent=2))


if __name__ == "__main__":
    main()
