"""Uniform tensor grids and discrete probability measures supported on them.

The grid convention is fixed once for the whole package: axis ``k`` covers
``[lo[k], hi[k]]`` with ``counts[k]`` cells of equal width, and the grid
points sit at the cell centers.  The reference weight of a single point is
the common cell volume, so densities with respect to the underlying domain
are ``weights / cell_volume``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "UniformGrid",
    "DiscreteMeasure",
    "build_grid",
    "second_moment",
    "discrete_entropy",
    "l1_distance",
    "marginal",
    "gaussian_measure",
    "gaussian_cell_masses",
    "write_measure_csv",
    "read_measure_csv",
]

# 17 significant digits round-trips any float64.
_FLOAT_FMT = ".17g"


def _fmt(x: float) -> str:
    return format(float(x), _FLOAT_FMT)


@dataclass(frozen=True)
class UniformGrid:
    """Axis-aligned uniform grid with points at cell centers.

    Points are stored in row-major order with the last axis varying
    fastest, matching ``numpy``'s C ordering of an array of shape
    ``counts``.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        counts = tuple(int(c) for c in self.counts)
        if not (len(lo) == len(hi) == len(counts)):
            raise ValueError(
                f"axis mismatch: lo has {len(lo)} entries, hi has {len(hi)}, "
                f"counts has {len(counts)}"
            )
        if len(lo) == 0:
            raise ValueError("grid needs at least one axis")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError(f"axis {k}: bounds must be finite, got [{a}, {b}]")
            if not b > a:
                raise ValueError(f"axis {k}: degenerate interval [{a}, {b}]")
        for k, c in enumerate(counts):
            if c < 1:
                raise ValueError(f"axis {k}: count must be >= 1, got {c}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / c for a, b, c in zip(self.lo, self.hi, self.counts))

    @property
    def cell_volume(self) -> float:
        """Reference weight of one grid point (product of spacings)."""
        vol = 1.0
        for s in self.spacing:
            vol *= s
        return vol

    def axis_points(self, k: int) -> np.ndarray:
        a, c, d = self.lo[k], self.counts[k], self.spacing[k]
        return a + d * (np.arange(c) + 0.5)

    @cached_property
    def _points(self) -> np.ndarray:
        axes = [self.axis_points(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    def points(self) -> np.ndarray:
        """All grid points as an ``(size, dim)`` array in storage order."""
        return self._points

    def sub_grid(self, axes: Sequence[int]) -> "UniformGrid":
        axes = list(axes)
        return UniformGrid(
            tuple(self.lo[k] for k in axes),
            tuple(self.hi[k] for k in axes),
            tuple(self.counts[k] for k in axes),
        )


def build_grid(
    lo: Sequence[float], hi: Sequence[float], counts: Sequence[int]
) -> UniformGrid:
    """Construct a grid, requiring at least two points per axis."""
    for k, c in enumerate(counts):
        if int(c) < 2:
            raise ValueError(f"axis {k}: need at least 2 points per axis, got {c}")
    return UniformGrid(tuple(lo), tuple(hi), tuple(counts))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights on a grid, normalized to unit total mass.

    ``input_mass`` records the total mass of the raw weights that were
    handed to :meth:`from_weights` before normalization; it is a
    diagnostic (e.g. how much of a continuous density the grid captured)
    and does not affect any computation.
    """

    grid: UniformGrid
    weights: np.ndarray
    input_mass: float = 1.0

    @staticmethod
    def from_weights(grid: UniformGrid, weights: np.ndarray) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != grid.size:
            raise ValueError(f"expected {grid.size} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        if np.any(w < 0):
            i = int(np.argmin(w))
            raise ValueError(f"negative weight {w[i]} at index {i}")
        mass = float(w.sum())
        if mass <= 0:
            raise ValueError("total mass must be positive")
        w = w / mass
        w.setflags(write=False)
        return DiscreteMeasure(grid, w, input_mass=mass)

    @staticmethod
    def uniform(grid: UniformGrid) -> "DiscreteMeasure":
        return DiscreteMeasure.from_weights(grid, np.ones(grid.size))

    def density(self) -> np.ndarray:
        """Density values with respect to the underlying domain."""
        return self.weights / self.grid.cell_volume


def second_moment(measure: DiscreteMeasure) -> float:
    """Weighted sum of squared point norms."""
    pts = measure.grid.points()
    sq = np.einsum("ij,ij->i", pts, pts)
    return float(sq @ measure.weights)


def discrete_entropy(measure: DiscreteMeasure) -> float:
    """Entropy of the measure against the grid reference volume.

    Computed as ``sum_i w_i log(w_i / vol)`` with the ``0 log 0 = 0``
    convention; it is bounded below by ``log(1 / (M vol))``, attained by
    the uniform measure.
    """
    w = measure.weights
    vol = measure.grid.cell_volume
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos] / vol)))


def l1_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """L1 distance of the densities over the domain (equals sum |wa - wb|)."""
    if a.grid != b.grid:
        raise ValueError("measures live on different grids")
    return float(np.abs(a.weights - b.weights).sum())


def marginal(measure: DiscreteMeasure, axes: Sequence[int]) -> DiscreteMeasure:
    """Marginal of the measure onto a subset of axes (ascending order)."""
    d = measure.grid.dim
    axes = sorted(set(int(k) for k in axes))
    if not axes:
        raise ValueError("need at least one axis to keep")
    for k in axes:
        if k < 0 or k >= d:
            raise ValueError(f"axis {k} out of range for a {d}-d grid")
    drop = tuple(k for k in range(d) if k not in axes)
    w = measure.weights.reshape(measure.grid.counts)
    if drop:
        w = w.sum(axis=drop)
    return DiscreteMeasure.from_weights(measure.grid.sub_grid(axes), w.reshape(-1))


def gaussian_cell_masses(grid: UniformGrid, mean, cov) -> np.ndarray:
    """Raw cell masses (density times cell volume) of a normal distribution.

    ``cov`` is either a scalar variance (isotropic) or a full covariance
    matrix; the result is not normalized, so its total records how much of
    the distribution the grid captures.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    if mean.shape[0] != grid.dim:
        raise ValueError(f"mean has {mean.shape[0]} entries for a {grid.dim}-d grid")
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(grid.dim)
    if cov.shape != (grid.dim, grid.dim):
        raise ValueError(f"covariance shape {cov.shape} for a {grid.dim}-d grid")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance must be positive definite") from exc
    centered = grid.points() - mean
    z = np.linalg.solve(chol, centered.T)
    norm = (2.0 * math.pi) ** (grid.dim / 2.0) * float(np.prod(np.diag(chol)))
    dens = np.exp(-0.5 * np.einsum("ij,ij->j", z, z)) / norm
    return dens * grid.cell_volume


def gaussian_measure(grid: UniformGrid, mean, cov) -> DiscreteMeasure:
    """Normal distribution sampled at cell centers, renormalized to the grid."""
    return DiscreteMeasure.from_weights(grid, gaussian_cell_masses(grid, mean, cov))


def write_measure_csv(measure: DiscreteMeasure, path) -> None:
    """Write ``index,coord_1,...,coord_d,weight`` rows in storage order."""
    pts = measure.grid.points()
    d = measure.grid.dim
    header = "index," + ",".join(f"coord_{k + 1}" for k in range(d)) + ",weight"
    lines = [header]
    for i in range(measure.grid.size):
        coords = ",".join(_fmt(pts[i, k]) for k in range(d))
        lines.append(f"{i},{coords},{_fmt(measure.weights[i])}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measure_csv(path, grid: UniformGrid) -> DiscreteMeasure:
    """Read a measure CSV written for ``grid``, validating layout and coords."""
    with open(path, "r", newline="") as fh:
        rows = [line.strip() for line in fh if line.strip()]
    d = grid.dim
    expected_header = "index," + ",".join(f"coord_{k + 1}" for k in range(d)) + ",weight"
    if not rows or rows[0] != expected_header:
        raise ValueError(f"{path}: expected header {expected_header!r}")
    body = rows[1:]
    if len(body) != grid.size:
        raise ValueError(f"{path}: expected {grid.size} rows, got {len(body)}")
    pts = grid.points()
    weights = np.empty(grid.size)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != d + 2:
            raise ValueError(f"{path}: row {i} has {len(parts)} fields, expected {d + 2}")
        if int(parts[0]) != i:
            raise ValueError(f"{path}: row {i} carries index {parts[0]}")
        for k in range(d):
            c = float(parts[1 + k])
            if abs(c - pts[i, k]) > 1e-9 * (1.0 + abs(pts[i, k])):
                raise ValueError(
                    f"{path}: row {i} coordinate {k} is {c}, grid has {pts[i, k]}"
                )
        weights[i] = float(parts[-1])
    return DiscreteMeasure.from_weights(grid, weights)
