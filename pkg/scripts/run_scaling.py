"""Scaling sweep: solve time and convergence factor against problem size and polynomial order.

Usage: python scripts/run_scaling.py [--scales 6,8,11,16,22] [--orders "5,3;9,7"] [--out DIR]
Prints the log-log slope of time against DOF and the spread of q for each order pair and overlap mode.
"""

import argparse
from pathlib import Path

import numpy as np

from wavemg.cases import ScalingConfig, loglog_slope, run_scaling_sweep
from wavemg.cli import write_csv


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scales", default="6,8,11,16,22")
    p.add_argument("--orders", default="5,3")
    p.add_argument("--modes", default="fixed,refined")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", type=Path, default=Path("out/scaling"))
    args = p.parse_args(argv)

    scales = [int(s) for s in args.scales.split(",")]
    orders = [tuple(int(v) for v in o.split(",")) for o in args.orders.split(";")]
    modes = tuple(args.modes.split(","))
    rows = run_scaling_sweep(scales, orders, ScalingConfig(repeats=args.repeats), modes)

    args.out.mkdir(parents=True, exist_ok=True)
    cols = ["dof", "seconds", "q", "P_x", "P_sigma", "n_elements", "overlap_mode", "iterations"]
    write_csv(args.out / "scaling.csv", cols, ([r[c] for c in cols] for r in rows))
    for r in rows:
        print(f"P={r['P_x']},{r['P_sigma']:<2} {r['overlap_mode']:<8} dof {r['dof']:>7}  "
              f"{r['seconds'] * 1e3:9.1f} ms  q {r['q']:.4f}  its {r['iterations']}")
    for o in orders:
        for m in modes:
            sel = [r for r in rows if (r["P_x"], r["P_sigma"]) == o and r["overlap_mode"] == m]
            if len(sel) < 2:
                continue
            q = np.array([r["q"] for r in sel])
            slope = loglog_slope([r["dof"] for r in sel], [r["seconds"] for r in sel])
            print(f"P={o} {m}: slope {slope:.3f}, q mean {q.mean():.4f}, "
                  f"max deviation {100 * np.max(np.abs(q - q.mean())) / q.mean():.1f}%")


if __name__ == "__main__":
    main()
