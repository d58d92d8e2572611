"""Flat key=value run configuration: strict parsing, echo, object builders.

The config file format is deliberately minimal so that experiment setups
diff cleanly: one ``key = value`` per line, ``#`` comment lines, no
sections.  Unknown keys, duplicate keys, malformed values, and keys that do
not apply to the selected problem are all hard errors naming the key.
Structured values keep a compact string form (``power:3``,
``quadratic:0,1``, ``gaussian:0:0.25``) that round-trips through the echo.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import kramers
from .costs import (
    KolmogorovCost,
    KramersCost,
    WeightedQuadraticCost,
    build_msd_matrices,
    quadratic_drift,
    zero_drift,
)
from .free_energy import FreeEnergySpec, InternalEnergy
from .grid import DiscreteMeasure, UniformGrid, build_grid, gaussian_cell_masses

__all__ = [
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "render_config",
    "build_grid_from",
    "build_cost_from",
    "build_energy_from",
    "build_initial_from",
    "exact_reference",
]

_PROBLEMS = ("heat", "nonlinear_diffusion", "kramers", "kolmogorov")
_FLOAT_FMT = ".17g"


def _fmt(x: float) -> str:
    return format(float(x), _FLOAT_FMT)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run description; field order is the echo order."""

    problem: str
    grid_lo: tuple[float, ...]
    grid_hi: tuple[float, ...]
    grid_counts: tuple[int, ...]
    h: float
    eps: float
    horizon: float
    tol: float = 1e-8
    max_iter: int = 10000
    kernel_mode: str = "dense"
    log_domain: bool = True
    absorb_threshold: float = 1e50
    save_every: int = 1
    out_dir: str | None = None
    internal_energy: str = "boltzmann"
    potential: str = "zero"
    initial: str | None = None
    matrix_a: tuple[float, ...] | None = None
    drift_g: str | None = None
    chain_n: int | None = None
    block_d: int | None = None
    oracle_x0: float = 0.0
    oracle_v0: float = 0.0
    oracle_t0: float | None = None

    @property
    def dim(self) -> int:
        return len(self.grid_counts)

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.h)


def _err(key: str, msg: str) -> ValueError:
    return ValueError(f"config key '{key}': {msg}")


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise _err(key, f"expected a number, got {raw!r}") from None


def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise _err(key, f"expected an integer, got {raw!r}") from None


def _parse_bool(key, raw):
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise _err(key, f"expected true or false, got {raw!r}")


def _parse_float_list(key, raw):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise _err(key, "expected a comma-separated list of numbers")
    return tuple(_parse_float(key, p) for p in parts)


def _parse_int_list(key, raw):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise _err(key, "expected a comma-separated list of integers")
    return tuple(_parse_int(key, p) for p in parts)


def _parse_str(key, raw):
    return raw


_PARSERS = {
    "problem": _parse_str,
    "grid_lo": _parse_float_list,
    "grid_hi": _parse_float_list,
    "grid_counts": _parse_int_list,
    "h": _parse_float,
    "eps": _parse_float,
    "horizon": _parse_float,
    "tol": _parse_float,
    "max_iter": _parse_int,
    "kernel_mode": _parse_str,
    "log_domain": _parse_bool,
    "absorb_threshold": _parse_float,
    "save_every": _parse_int,
    "out_dir": _parse_str,
    "internal_energy": _parse_str,
    "potential": _parse_str,
    "initial": _parse_str,
    "matrix_a": _parse_float_list,
    "drift_g": _parse_str,
    "chain_n": _parse_int,
    "block_d": _parse_int,
    "oracle_x0": _parse_float,
    "oracle_v0": _parse_float,
    "oracle_t0": _parse_float,
}

_REQUIRED = ("problem", "grid_lo", "grid_hi", "grid_counts", "h", "eps", "horizon")

# Keys that only make sense for specific problems.
_PROBLEM_KEYS = {
    "matrix_a": ("heat", "nonlinear_diffusion"),
    "drift_g": ("kramers",),
    "chain_n": ("kolmogorov",),
    "block_d": ("kolmogorov",),
    "oracle_x0": ("kramers",),
    "oracle_v0": ("kramers",),
    "oracle_t0": ("kramers",),
}


def parse_internal_energy(spec: str) -> InternalEnergy:
    if spec == "boltzmann":
        return InternalEnergy.boltzmann()
    if spec.startswith("power:"):
        try:
            m = int(spec.split(":", 1)[1])
        except ValueError:
            raise _err("internal_energy", f"bad exponent in {spec!r}") from None
        return InternalEnergy.power_law(m)
    raise _err("internal_energy", f"expected boltzmann or power:<m>, got {spec!r}")


def _parse_potential_spec(spec: str, dim: int):
    """Returns ('zero',), ('quadratic', coeffs) or ('table', path)."""
    if spec == "zero":
        return ("zero",)
    if spec.startswith("quadratic:"):
        coeffs = _parse_float_list("potential", spec.split(":", 1)[1])
        if len(coeffs) != dim:
            raise _err("potential", f"{len(coeffs)} coefficients for a {dim}-d grid")
        if any(not (math.isfinite(c) and c >= 0) for c in coeffs):
            raise _err("potential", "coefficients must be finite and nonnegative")
        return ("quadratic", coeffs)
    if spec.startswith("table:"):
        path = spec.split(":", 1)[1]
        if not path:
            raise _err("potential", "table form needs a file path")
        return ("table", path)
    raise _err("potential", f"expected zero, quadratic:<c,...> or table:<path>, got {spec!r}")


def _parse_initial_spec(spec: str, dim: int):
    if spec == "green":
        return ("green",)
    if spec == "uniform":
        return ("uniform",)
    if spec.startswith("gaussian:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise _err("initial", f"expected gaussian:<mean,...>:<var>, got {spec!r}")
        mean = _parse_float_list("initial", parts[1])
        if len(mean) != dim:
            raise _err("initial", f"mean has {len(mean)} entries for a {dim}-d grid")
        var = _parse_float("initial", parts[2])
        if not (math.isfinite(var) and var > 0):
            raise _err("initial", f"variance must be positive, got {var}")
        return ("gaussian", mean, var)
    raise _err("initial", f"expected green, uniform or gaussian:<mean,...>:<var>, got {spec!r}")


def _parse_drift_spec(spec: str):
    if spec == "zero":
        return ("zero",)
    if spec.startswith("quadratic:"):
        coeff = _parse_float("drift_g", spec.split(":", 1)[1])
        if not math.isfinite(coeff):
            raise _err("drift_g", f"coefficient must be finite, got {coeff}")
        return ("quadratic", coeff)
    raise _err("drift_g", f"expected zero or quadratic:<coefficient>, got {spec!r}")


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{origin}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _PARSERS:
            raise ValueError(f"{origin}:{lineno}: unknown config key '{key}'")
        if key in raw:
            raise ValueError(f"{origin}:{lineno}: duplicate config key '{key}'")
        if not value:
            raise _err(key, "empty value")
        raw[key] = value

    for key in _REQUIRED:
        if key not in raw:
            raise ValueError(f"missing required config key '{key}'")

    values = {key: _PARSERS[key](key, raw[key]) for key in raw}
    return _resolve(values)


def parse_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config_text(fh.read(), origin=str(path))


def _resolve(values: dict) -> RunConfig:
    problem = values["problem"]
    if problem not in _PROBLEMS:
        raise _err("problem", f"expected one of {', '.join(_PROBLEMS)}, got {problem!r}")

    for key, allowed in _PROBLEM_KEYS.items():
        if key in values and problem not in allowed:
            raise _err(key, f"not used by problem '{problem}'")

    lo, hi, counts = values["grid_lo"], values["grid_hi"], values["grid_counts"]
    if not (len(lo) == len(hi) == len(counts)):
        raise _err("grid_counts", "grid_lo, grid_hi, grid_counts must have equal length")
    dim = len(counts)
    for k in range(dim):
        if counts[k] < 2:
            raise _err("grid_counts", f"axis {k} needs at least 2 points, got {counts[k]}")
        if not (math.isfinite(lo[k]) and math.isfinite(hi[k]) and hi[k] > lo[k]):
            raise _err("grid_hi", f"axis {k}: bad interval [{lo[k]}, {hi[k]}]")

    for key in ("h", "eps", "horizon", "tol"):
        if key in values and not (math.isfinite(values[key]) and values[key] > 0):
            raise _err(key, f"must be a positive finite number, got {values[key]}")
    h, horizon = values["h"], values["horizon"]
    n = round(horizon / h)
    if n < 1 or abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
        raise _err("horizon", f"{horizon} is not an integer multiple of h = {h}")

    if values.get("max_iter", 1) < 1:
        raise _err("max_iter", f"must be at least 1, got {values['max_iter']}")
    if values.get("save_every", 1) < 1:
        raise _err("save_every", f"must be at least 1, got {values['save_every']}")
    if not values.get("absorb_threshold", 1e50) > 1:
        raise _err("absorb_threshold", f"must exceed 1, got {values['absorb_threshold']}")
    if values.get("kernel_mode", "dense") not in ("dense", "matrix_free"):
        raise _err("kernel_mode", f"expected dense or matrix_free, got {values['kernel_mode']!r}")

    parse_internal_energy(values.get("internal_energy", "boltzmann"))

    # Problem-dependent defaults for the physics keys.
    if problem == "kramers":
        values.setdefault("potential", "quadratic:0,1")
        values.setdefault("initial", "green")
        values.setdefault("drift_g", "zero")
        if dim != 2:
            raise _err("grid_counts", "problem 'kramers' needs a 2-d position-velocity grid")
        if "oracle_t0" not in values:
            raise ValueError("missing required config key 'oracle_t0' (problem is kramers)")
        if not (math.isfinite(values["oracle_t0"]) and values["oracle_t0"] > 0):
            raise _err("oracle_t0", f"must be positive, got {values['oracle_t0']}")
        _parse_drift_spec(values["drift_g"])
    else:
        values.setdefault("potential", "zero")
        if "initial" not in values:
            raise ValueError(f"missing required config key 'initial' (problem is {problem})")

    if problem == "kolmogorov":
        for key in ("chain_n", "block_d"):
            if key not in values:
                raise ValueError(f"missing required config key '{key}' (problem is kolmogorov)")
            if values[key] < 1:
                raise _err(key, f"must be at least 1, got {values[key]}")
        if values["chain_n"] * values["block_d"] != dim:
            raise _err(
                "chain_n",
                f"chain_n * block_d = {values['chain_n'] * values['block_d']} "
                f"but the grid has {dim} axes",
            )

    if problem in ("heat", "nonlinear_diffusion") and "matrix_a" in values:
        if len(values["matrix_a"]) != dim * dim:
            raise _err("matrix_a", f"expected {dim * dim} entries for a {dim}-d grid")

    if problem == "heat":
        if values.get("internal_energy", "boltzmann") != "boltzmann":
            raise _err("internal_energy", "problem 'heat' requires boltzmann")
        if values.get("potential", "zero") != "zero":
            raise _err("potential", "problem 'heat' requires potential = zero")

    _parse_potential_spec(values.get("potential", "zero"), dim)
    init = _parse_initial_spec(values["initial"], dim)
    if init[0] == "green" and problem != "kramers":
        raise _err("initial", "green initial data is only defined for problem 'kramers'")

    return RunConfig(**values)


def render_config(config: RunConfig) -> str:
    """Echo the fully resolved config; parsing the echo reproduces it."""
    lines = []
    for name in RunConfig.__dataclass_fields__:
        val = getattr(config, name)
        if val is None:
            continue
        if name in _PROBLEM_KEYS and config.problem not in _PROBLEM_KEYS[name]:
            continue  # the parser rejects keys that don't apply to the problem
        if isinstance(val, bool):
            rendered = "true" if val else "false"
        elif isinstance(val, float):
            rendered = _fmt(val)
        elif isinstance(val, tuple):
            rendered = ",".join(
                _fmt(v) if isinstance(v, float) else str(v) for v in val
            )
        else:
            rendered = str(val)
        lines.append(f"{name} = {rendered}")
    return "\n".join(lines) + "\n"


def build_grid_from(config: RunConfig) -> UniformGrid:
    return build_grid(config.grid_lo, config.grid_hi, config.grid_counts)


def build_cost_from(config: RunConfig):
    if config.problem in ("heat", "nonlinear_diffusion"):
        d = config.dim
        if config.matrix_a is None:
            a = np.eye(d)
        else:
            a = np.asarray(config.matrix_a, dtype=float).reshape(d, d)
        return WeightedQuadraticCost(a, config.h)
    if config.problem == "kramers":
        drift = _parse_drift_spec(config.drift_g or "zero")
        grad = zero_drift if drift[0] == "zero" else quadratic_drift(drift[1])
        return KramersCost(grad, config.h, dtilde=config.dim // 2)
    # kolmogorov
    mats = build_msd_matrices(config.chain_n, config.block_d, config.h)
    return KolmogorovCost(mats)


def build_energy_from(config: RunConfig, grid: UniformGrid) -> FreeEnergySpec:
    internal = parse_internal_energy(config.internal_energy)
    pot = _parse_potential_spec(config.potential, grid.dim)
    if pot[0] == "zero":
        f = np.zeros(grid.size)
    elif pot[0] == "quadratic":
        pts = grid.points()
        f = 0.5 * (pts * pts) @ np.asarray(pot[1])
    else:
        path = pot[1]
        if not os.path.exists(path):
            raise _err("potential", f"table file {path!r} does not exist")
        f = np.loadtxt(path, dtype=float).reshape(-1)
        if f.shape[0] != grid.size:
            raise _err("potential", f"table has {f.shape[0]} values, grid has {grid.size}")
    return FreeEnergySpec(grid, f, internal)


def build_initial_from(config: RunConfig, grid: UniformGrid) -> DiscreteMeasure:
    init = _parse_initial_spec(config.initial, grid.dim)
    if init[0] == "green":
        return kramers.sample_on_grid(grid, config.oracle_t0, config.oracle_x0, config.oracle_v0)
    if init[0] == "uniform":
        return DiscreteMeasure.uniform(grid)
    _, mean, var = init
    return DiscreteMeasure.from_weights(grid, gaussian_cell_masses(grid, mean, var))


def exact_reference(config: RunConfig, grid: UniformGrid):
    """Raw exact cell masses as a function of scheme time, or None.

    The reference exists for the kinetic problem started from its point
    source profile with zero drift, and for the linear diffusion problem
    with Gaussian initial data (covariance grows by 2 t A).  Returned
    weights are unnormalized so grid truncation shows up in the error.
    """
    if config.problem == "kramers":
        init = _parse_initial_spec(config.initial, grid.dim)
        drift = _parse_drift_spec(config.drift_g or "zero")
        pot = _parse_potential_spec(config.potential, grid.dim)
        friction_only = pot == ("quadratic", (0.0, 1.0))
        if init[0] != "green" or drift[0] != "zero" or not friction_only:
            return None
        if config.internal_energy != "boltzmann":
            return None
        pts = grid.points()

        def kramers_exact(t: float) -> np.ndarray:
            dens = kramers.green_density(
                config.oracle_t0 + t, pts[:, 0], pts[:, 1], config.oracle_x0, config.oracle_v0
            )
            return dens * grid.cell_volume

        return kramers_exact

    if config.problem == "heat":
        init = _parse_initial_spec(config.initial, grid.dim)
        if init[0] != "gaussian":
            return None
        _, mean, var = init
        d = grid.dim
        a = (
            np.eye(d)
            if config.matrix_a is None
            else np.asarray(config.matrix_a, dtype=float).reshape(d, d)
        )

        def heat_exact(t: float) -> np.ndarray:
            cov = var * np.eye(d) + 2.0 * t * a
            return gaussian_cell_masses(grid, mean, cov)

        return heat_exact

    return None
