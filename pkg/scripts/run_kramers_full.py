#!/usr/bin/env python3
"""Full-resolution kinetic benchmark: 200x130 grid, matrix-free kernel.

Same protocol as run_kramers_desk.py.  Expect half an hour to a bit over an
hour per regularization value on a single core (the sharper kernels need
more scaling sweeps); extra flags are passed through.
"""

import sys

import run_kramers_desk

if __name__ == "__main__":
    sys.exit(run_kramers_desk.main(
        ["--counts", "200,130", "--matrix-free", "--out", "runs/kramers_full"]
        + sys.argv[1:]
    ))
