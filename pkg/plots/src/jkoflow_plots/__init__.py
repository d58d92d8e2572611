"""Figures from solver run directories.

Everything here works off the solver's documented CSV artifacts —
config_echo.txt, state_NNNN.csv, error.csv, exact_<t>.csv — and never
imports the solver itself, so runs can be plotted on machines that only
have the output files.
"""

from .figures import plot_error_curve, plot_marginals
from .runs import RunSeries, discover_runs, load_run, marginal_curve, read_state

__version__ = "0.1.0"

__all__ = [
    "RunSeries",
    "discover_runs",
    "load_run",
    "marginal_curve",
    "plot_error_curve",
    "plot_marginals",
    "read_state",
]
