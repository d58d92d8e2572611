"""Internal energies, the discrete free energy, and its pointwise KL proximal map.

The free energy of a measure with weights ``rho`` on a grid with cell
volume ``lam`` is ``sum_i f_i rho_i + lam * u(rho_i / lam)``, where ``f``
holds nonnegative potential samples and ``u`` is a convex internal energy.
The proximal map solves, componentwise,

    min_rho  KL(rho || q) + kappa * (f rho + lam u(rho / lam)),

whose stationarity condition ``log(rho/q) + kappa (f + u'(rho/lam)) = 0``
is strictly monotone in ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DiscreteMeasure, UniformGrid

__all__ = [
    "InternalEnergy",
    "FreeEnergySpec",
    "pressure",
    "discrete_free_energy",
    "kl_prox",
    "kl_prox_log",
]


@dataclass(frozen=True)
class InternalEnergy:
    """Convex integrand of the internal energy.

    ``boltzmann``: u(s) = s log s (u(0) = 0), pressure p(s) = s.
    ``power_law(m)``: u(s) = s^m / (m - 1) for integer m >= 2, p(s) = s^m.
    """

    kind: str
    m: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "boltzmann":
            if self.m is not None:
                raise ValueError("boltzmann energy takes no exponent")
        elif self.kind == "power_law":
            if self.m is None or int(self.m) != self.m or self.m < 2:
                raise ValueError(f"power_law exponent must be an integer >= 2, got {self.m}")
            object.__setattr__(self, "m", int(self.m))
        else:
            raise ValueError(f"unknown internal energy kind {self.kind!r}")

    @staticmethod
    def boltzmann() -> "InternalEnergy":
        return InternalEnergy("boltzmann")

    @staticmethod
    def power_law(m: int) -> "InternalEnergy":
        return InternalEnergy("power_law", m)

    def u(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("u is defined on s >= 0")
        if self.kind == "boltzmann":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)
        return s**self.m / (self.m - 1)

    def u_prime(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("u' is defined on s >= 0")
        if self.kind == "boltzmann":
            with np.errstate(divide="ignore"):
                return np.log(s) + 1.0
        return self.m * s ** (self.m - 1) / (self.m - 1)


def pressure(internal: InternalEnergy, s):
    """p(s) = u'(s) s - u(s); equals s for Boltzmann and s^m for power laws."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("pressure is defined on s >= 0")
    if internal.kind == "boltzmann":
        return s + 0.0
    return s**internal.m


@dataclass(frozen=True)
class FreeEnergySpec:
    """Potential samples on a grid together with an internal energy."""

    grid: UniformGrid
    potential: np.ndarray
    internal: InternalEnergy

    def __post_init__(self) -> None:
        f = np.asarray(self.potential, dtype=float).reshape(-1)
        if f.shape[0] != self.grid.size:
            raise ValueError(f"expected {self.grid.size} potential values, got {f.shape[0]}")
        if not np.all(np.isfinite(f)):
            raise ValueError("potential contains non-finite entries")
        if np.any(f < 0):
            i = int(np.argmin(f))
            raise ValueError(f"potential must be nonnegative, got {f[i]} at index {i}")
        f.setflags(write=False)
        object.__setattr__(self, "potential", f)


def discrete_free_energy(spec: FreeEnergySpec, rho: DiscreteMeasure) -> float:
    """Potential energy plus internal energy of the grid density."""
    if rho.grid != spec.grid:
        raise ValueError("measure lives on a different grid than the energy spec")
    lam = spec.grid.cell_volume
    w = rho.weights
    return float(spec.potential @ w + lam * np.sum(spec.internal.u(w / lam)))


def kl_prox(spec: FreeEnergySpec, q: np.ndarray, kappa: float) -> np.ndarray:
    """Componentwise minimizer of KL(rho||q) + kappa * free energy.

    Requires strictly positive ``q``.  Boltzmann uses the closed form
    ``rho = (q lam^kappa e^{-kappa(f+1)})^{1/(1+kappa)}`` evaluated in the
    log domain; power laws solve the monotone stationarity equation by
    safeguarded Newton iteration.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != spec.grid.size:
        raise ValueError(f"expected {spec.grid.size} entries in q, got {q.shape[0]}")
    if np.any(q <= 0) or not np.all(np.isfinite(q)):
        i = int(np.argmin(q))
        raise ValueError(f"q must be strictly positive and finite, got {q[i]} at index {i}")
    return np.exp(kl_prox_log(spec, np.log(q), kappa))


def kl_prox_log(spec: FreeEnergySpec, log_q: np.ndarray, kappa: float) -> np.ndarray:
    """Log-domain KL prox: maps log q to log rho.

    Entries with ``log_q = -inf`` (zero mass reachable) map to ``-inf``.
    This variant is what the scaling loops call; it stays finite for
    inputs whose plain-domain values would under- or overflow.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    log_q = np.asarray(log_q, dtype=float).reshape(-1)
    f = spec.potential
    lam = spec.grid.cell_volume
    log_lam = np.log(lam)

    if spec.internal.kind == "boltzmann":
        return (log_q + kappa * (log_lam - f - 1.0)) / (1.0 + kappa)

    # Power law: solve t - log_q + kappa f + kappa c exp((m-1)(t - log_lam)) = 0
    # for t = log rho; the left side is strictly increasing in t.
    m = spec.internal.m
    c = m / (m - 1)
    dead = np.isneginf(log_q)
    lq = np.where(dead, 0.0, log_q)

    up_q = c * np.exp(np.minimum((m - 1) * (lq - log_lam), 700.0))  # u'(q/lam) >= 0
    lo = lq - kappa * (f + up_q)
    hi = lq.copy()
    t = np.minimum(hi, lq - kappa * f / (1.0 + kappa))  # cheap interior start
    # when the exponential dominates, start from its balance point; otherwise
    # Newton approaches the root at a fixed crawl of 1/(m-1) per step
    big = lq - kappa * f - log_lam
    with np.errstate(over="ignore"):
        t_exp = log_lam + np.log1p(np.maximum(big, 0.0) / (kappa * c)) / (m - 1)
    t = np.minimum(t, t_exp)
    t = np.clip(t, lo, hi)
    done = False
    for _ in range(200):
        e = c * np.exp(np.minimum((m - 1) * (t - log_lam), 700.0))
        g = t - lq + kappa * f + kappa * e
        gp = 1.0 + kappa * (m - 1) * e
        lo = np.where(g < 0, t, lo)
        hi = np.where(g > 0, t, hi)
        t_new = t - g / gp
        bad = (t_new < lo) | (t_new > hi) | ~np.isfinite(t_new)
        t_new = np.where(bad, 0.5 * (lo + hi), t_new)
        if np.max(np.abs(t_new - t)) <= 1e-14:
            t = t_new
            done = True
            break
        t = t_new
    if not done and np.max(hi - lo) > 1e-12:
        i = int(np.argmax(hi - lo))
        raise RuntimeError(
            f"kl_prox root find failed to converge at index {i} "
            f"(bracket width {hi[i] - lo[i]:.3e} after 200 iterations)"
        )
    return np.where(dead, -np.inf, t)
