#!/usr/bin/env python3
"""Kinetic point-source benchmark: one run per regularization strength.

Produces one subdirectory per eps under --out (trace, states every fourth
step, per-step error.csv), plus exact reference slices in <out>/exact/ for
the overlay figures, and prints the error table at t = 0.2.  The default
60x40 grid finishes in seconds; run_kramers_full.py drives the same
protocol at full resolution.
"""

import argparse
import csv
import os
import sys

from jkoflow.cli import main as cli_main

CONFIG = """\
problem = kramers
grid_lo = -0.5,-2.4
grid_hi = 0.5,2.4
grid_counts = {counts}
h = 0.02
eps = {eps}
horizon = 0.16
oracle_t0 = 0.14
save_every = 4
kernel_mode = {mode}
out_dir = {out}
"""

# absolute times of the saved slices: initial, mid, terminal
SLICES = (0.14, 0.22, 0.3)


def run(eps_values, counts, out_root, mode):
    os.makedirs(out_root, exist_ok=True)
    errors_at = {}
    first_cfg = None
    for eps in eps_values:
        out = os.path.join(out_root, f"eps_{eps:g}")
        os.makedirs(out, exist_ok=True)
        cfg_path = os.path.join(out, "config.txt")
        with open(cfg_path, "w") as fh:
            fh.write(CONFIG.format(counts=counts, eps=f"{eps:g}", mode=mode, out=out))
        first_cfg = first_cfg or cfg_path
        code = cli_main(["solve", "--config", cfg_path])
        if code != 0:
            return code
        with open(os.path.join(out, "error.csv")) as fh:
            rows = list(csv.DictReader(fh))
        errors_at[eps] = {float(r["time"]): float(r["l1_error"]) for r in rows}

    exact_args = ["exact", "--config", first_cfg,
                  "--out", os.path.join(out_root, "exact")]
    for t in SLICES:
        exact_args += ["--time", f"{t:g}"]
    code = cli_main(exact_args)
    if code != 0:
        return code

    print("\nl1 error against the point-source solution at t = 0.2:")
    for eps in eps_values:
        err = next(e for t, e in errors_at[eps].items() if abs(t - 0.2) < 1e-9)
        print(f"  eps = {eps:<5g} -> {err:.4f}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/kramers_desk", help="parent directory for the runs")
    ap.add_argument("--eps", type=float, action="append",
                    help="regularization strength (repeatable; default 0.5 0.09 0.05)")
    ap.add_argument("--counts", default="60,40", help="grid counts as n_x,n_v")
    ap.add_argument("--matrix-free", action="store_true",
                    help="use the tiled kernel (required above roughly 10^4 cells)")
    args = ap.parse_args(argv)
    eps_values = args.eps or [0.5, 0.09, 0.05]
    mode = "matrix_free" if args.matrix_free else "dense"
    return run(eps_values, args.counts, args.out, mode)


if __name__ == "__main__":
    sys.exit(main())
