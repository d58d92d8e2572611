"""Exact Gaussian solution of the kinetic Fokker-Planck equation.

For the evolution  d/dt rho = -v d_x rho + d_v(v rho) + d_vv rho  started
from a point mass at (x0, v0), the solution is the Gaussian

    rho(t, x, v) = exp(-(S1 d1^2 - 2 S2 d1 d2 + S3 d2^2) / (2 D)) / (2 pi sqrt(D))

with d1 = x - x0 - v0 (1 - e^{-t}), d2 = v - v0 e^{-t},

    S1 = 1 - e^{-2t},  S2 = (1 - e^{-t})^2,  S3 = 2t - 3 + 4 e^{-t} - e^{-2t},

and D = S1 S3 - S2^2 = 2 (t - 2 + 4 e^{-t} - (t + 2) e^{-2t}).  Equivalently
the (x, v) covariance is [[S3, S2], [S2, S1]].  S3 and D vanish like t^3 and
t^4, so both are evaluated through expm1 with a series branch at small t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import DiscreteMeasure, UniformGrid

__all__ = [
    "GreenParams",
    "s_functions",
    "green_density",
    "sample_on_grid",
    "green_l1_error",
]

# Below this time the Gaussian is too close to singular for double precision.
_T_FLOOR = 1e-6
# Crossover between the series and the expm1 form of S3.  The direct form
# loses like 1/t^2, the truncated series like t^10; both are ~1e-14 here.
_T_SERIES = 0.12

# Taylor coefficients of S3 / t^3 = sum_k (4(-1)^k - (-2)^k) t^{k-3} / k!.
_S3_SERIES = (
    2.0 / 3.0,
    -0.5,
    7.0 / 30.0,
    -1.0 / 12.0,
    31.0 / 1260.0,
    -1.0 / 160.0,
    127.0 / 90720.0,
    -17.0 / 60480.0,
    511.0 / 9979200.0,
    -341.0 / 39916800.0,
)


def s_functions(t):
    """Return (S1, S2, S3, D) for positive times; vectorized over t."""
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("time must be positive and finite")
    em = np.expm1(-t)  # e^{-t} - 1
    s1 = -np.expm1(-2.0 * t)
    s2 = em * em
    # 2t - 3 + 4e^{-t} - e^{-2t} rewritten to cancel the O(1) and O(t) terms.
    s3_direct = 2.0 * (t + em) - em * em
    poly = np.full_like(t, _S3_SERIES[-1])
    for c in _S3_SERIES[-2::-1]:
        poly = poly * t + c
    s3 = np.where(t < _T_SERIES, t**3 * poly, s3_direct)
    det = s1 * s3 - s2 * s2
    return s1, s2, s3, det


@dataclass(frozen=True)
class GreenParams:
    """Point-source location and the reference time of the initial slice."""

    x0: float = 0.0
    v0: float = 0.0
    t0: float = 1.0

    def __post_init__(self):
        for name in ("x0", "v0", "t0"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if self.t0 <= 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")


def green_density(t: float, x, v, x0: float = 0.0, v0: float = 0.0):
    """Density at time t and phase-space points (x, v); x, v broadcast."""
    t = float(t)
    if not (np.isfinite(t) and t > 0):
        raise ValueError(f"time must be positive and finite, got {t}")
    if t < _T_FLOOR:
        warnings.warn(
            f"time {t:g} below {_T_FLOOR:g} clamped; the density is near-singular there",
            RuntimeWarning,
            stacklevel=2,
        )
        t = _T_FLOOR
    s1, s2, s3, det = s_functions(t)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    em = math.expm1(-t)
    d1 = x - x0 + v0 * em  # x - x0 - v0 (1 - e^{-t})
    d2 = v - v0 * (1.0 + em)
    quad = s1 * d1 * d1 - 2.0 * s2 * d1 * d2 + s3 * d2 * d2
    return np.exp(-quad / (2.0 * det)) / (2.0 * math.pi * math.sqrt(det))


def sample_on_grid(grid: UniformGrid, t: float, x0: float = 0.0, v0: float = 0.0) -> DiscreteMeasure:
    """Cell-mass sampling of the density on a position-velocity grid.

    Weights are the density at cell centers times the cell volume,
    renormalized to unit mass; the pre-normalization mass (< 1 when the grid
    truncates the tails) is kept in ``input_mass``.
    """
    if grid.dim != 2:
        raise ValueError(f"need a 2d position-velocity grid, got dim {grid.dim}")
    pts = grid.points()
    vals = green_density(t, pts[:, 0], pts[:, 1], x0, v0)
    return DiscreteMeasure.from_weights(grid, vals * grid.cell_volume)


def green_l1_error(measure: DiscreteMeasure, t: float, x0: float = 0.0, v0: float = 0.0) -> float:
    """L1 distance between a numeric iterate and the raw exact cell masses.

    The exact masses are not renormalized to the grid, so tail truncation
    counts against the error; this matches comparing densities in L1.
    """
    if measure.grid.dim != 2:
        raise ValueError(f"need a 2d position-velocity grid, got dim {measure.grid.dim}")
    pts = measure.grid.points()
    exact = green_density(t, pts[:, 0], pts[:, 1], x0, v0) * measure.grid.cell_volume
    return float(np.abs(measure.weights - exact).sum())
