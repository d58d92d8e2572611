"""Readers for run artifacts: config echoes, state CSVs, run discovery."""

import csv
import os
from dataclasses import dataclass

import numpy as np


def read_config_echo(path):
    """Parse a key = value echo file into a plain string dict."""
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if sep:
                values[key.strip()] = val.strip()
    return values


@dataclass(frozen=True)
class RunSeries:
    """One solver run: its directory plus the keys the figures need."""

    path: str
    eps: float
    h: float
    horizon: float
    t_offset: float  # absolute time of step 0 (nonzero for the kinetic runs)

    def state_path(self, step: int) -> str:
        return os.path.join(self.path, f"state_{step:04d}.csv")


def load_run(path) -> RunSeries:
    echo = os.path.join(path, "config_echo.txt")
    if not os.path.exists(echo):
        raise FileNotFoundError(f"{path!r} has no config_echo.txt; not a run directory")
    cfg = read_config_echo(echo)
    try:
        t0 = float(cfg["oracle_t0"]) if cfg.get("problem") == "kramers" else 0.0
        return RunSeries(path=path, eps=float(cfg["eps"]), h=float(cfg["h"]),
                         horizon=float(cfg["horizon"]), t_offset=t0)
    except KeyError as exc:
        raise ValueError(f"{echo}: config echo is missing key {exc}") from None


def discover_runs(root):
    """The root itself if it is a run, else every child run; largest eps first."""
    if os.path.exists(os.path.join(root, "config_echo.txt")):
        return [load_run(root)]
    runs = []
    for name in sorted(os.listdir(root)):
        child = os.path.join(root, name)
        if os.path.isdir(child) and os.path.exists(os.path.join(child, "config_echo.txt")):
            runs.append(load_run(child))
    if not runs:
        raise FileNotFoundError(f"no run directories (config_echo.txt) under {root!r}")
    return sorted(runs, key=lambda r: -r.eps)


def read_state(path):
    """Return (coords (M,d), weights (M,)) from a state or exact-slice CSV."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "index" or rows[0][-1] != "weight":
        raise ValueError(f"{path}: expected an index,coord_*,weight header")
    data = np.asarray(rows[1:], dtype=float)
    if data.ndim != 2 or data.shape[1] < 3:
        raise ValueError(f"{path}: no data rows")
    return data[:, 1:-1], data[:, -1]


def marginal_curve(coords, weights, axis):
    """Collapse cell masses onto one axis; returns (points, 1-d density)."""
    xs = np.unique(coords[:, axis])
    mass = np.zeros(xs.size)
    np.add.at(mass, np.searchsorted(xs, coords[:, axis]), weights)
    spacing = xs[1] - xs[0] if xs.size > 1 else 1.0
    return xs, mass / spacing
