"""The two figure kinds: marginal overlays and error-vs-time curves."""

import csv
import os

import matplotlib

matplotlib.use("Agg")  # batch rendering; outputs must not depend on a display

import matplotlib.pyplot as plt
import numpy as np

from .runs import discover_runs, marginal_curve, read_state

_AXIS_NAMES = ("position", "velocity")


def _slice_step(run, t: float) -> int:
    step = round(t / run.h)
    if step < 0 or abs(step * run.h - t) > 1e-9 or t > run.horizon + 1e-9:
        raise ValueError(
            f"slice t={t:g} is not a step inside the run horizon "
            f"(h={run.h:g}, horizon={run.horizon:g}) for {run.path!r}")
    return step


def _exact_path(root, t_abs: float) -> str:
    name = f"exact_{t_abs:g}.csv"
    candidates = [os.path.join(root, "exact", name),
                  os.path.join(os.path.dirname(os.path.abspath(root)), "exact", name)]
    for cand in candidates:
        if os.path.exists(cand):
            return cand
    raise FileNotFoundError(
        f"no exact reference {name} in an exact/ directory beside {root!r}; "
        "generate it with the solver's 'exact' subcommand")


def plot_marginals(root, slices, out):
    """Overlay scheme and exact marginals: one column per slice, one row per axis.

    ``slices`` are scheme times (0 = initial state); exact references are
    looked up at the absolute time ``t_offset + t``.  Returns the figure.
    """
    runs = discover_runs(root)
    slices = tuple(slices)
    if not slices:
        raise ValueError("no time slices requested")
    per_run = {}
    dim = None
    for run in runs:
        loaded = []
        for t in slices:
            path = run.state_path(_slice_step(run, t))
            if not os.path.exists(path):
                raise FileNotFoundError(
                    f"slice t={t:g}: no saved state {os.path.basename(path)} in "
                    f"{run.path!r} (saved states are controlled by save_every)")
            loaded.append(read_state(path))
        per_run[run.path] = loaded
        dim = loaded[-1][0].shape[1]

    base = runs[0]
    fig, axes = plt.subplots(dim, len(slices),
                             figsize=(3.4 * len(slices), 2.6 * dim), dpi=150,
                             squeeze=False, sharex="row", sharey="row")
    for j, t in enumerate(slices):
        exact = read_state(_exact_path(root, base.t_offset + t))
        for axis in range(dim):
            ax = axes[axis][j]
            xs, dens = marginal_curve(*exact, axis)
            ax.plot(xs, dens, color="black", lw=1.6, label="exact")
            for run in runs:
                xs, dens = marginal_curve(*per_run[run.path][j], axis)
                ax.plot(xs, dens, lw=1.1, label=f"eps = {run.eps:g}")
            if axis == 0:
                ax.set_title(f"t = {base.t_offset + t:g}")
            if axis == dim - 1:
                ax.set_xlabel(_AXIS_NAMES[axis] if axis < 2 else f"axis {axis}")
    for axis in range(dim):
        name = _AXIS_NAMES[axis] if axis < 2 else f"axis {axis}"
        axes[axis][0].set_ylabel(f"{name} marginal")
    axes[0][0].legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out)
    return fig


def plot_error_curve(root, window, out):
    """Error-vs-time curves, one per run, optionally restricted to a window."""
    runs = discover_runs(root)
    fig, ax = plt.subplots(figsize=(5.6, 3.8), dpi=150)
    for run in runs:
        path = os.path.join(run.path, "error.csv")
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"{run.path!r} has no error.csv (eps={run.eps:g}); produce one "
                "with the solver's 'error' subcommand")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["time"]) for r in rows])
        e = np.array([float(r["l1_error"]) for r in rows])
        if window is not None:
            keep = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
            t, e = t[keep], e[keep]
        if t.size == 0:
            raise ValueError(
                f"no error samples in window {window} for eps={run.eps:g} "
                f"({run.path!r})")
        ax.plot(t, e, marker="o", ms=3, lw=1.2, label=f"eps = {run.eps:g}")
    ax.set_xlabel("time")
    ax.set_ylabel("l1 error vs exact")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out)
    return fig
