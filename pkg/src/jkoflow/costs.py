"""Transport costs, their generating matrices, and Gibbs kernel operators.

Three cost families are provided, all nonnegative quadratic forms in the
endpoint pair:

* weighted quadratic  ``<(A + hI)^{-1}(x-y), x-y>`` for PSD ``A``;
* explicit kinetic cost ``|v'-v+h grad_g(x)|^2 + 12 |(x'-x)/h - (v'+v)/2|^2``
  on position-velocity space;
* mean-squared-derivative cost ``h^{2-2n} b^T M b`` for chains of n blocks,
  with ``b = J1 y - J2 x`` and the combinatorial matrices built here.

Every family factors as ``c(x, y) = || phi(x) + psi(y) ||^2`` for affine (or,
for the kinetic cost with a drift, nonlinear-in-x) feature maps, so pairwise
cost blocks reduce to one GEMM plus row norms.  The Gibbs kernel
``exp(-c/eps)`` is exposed as a linear operator in either a dense or a
row-tiled matrix-free mode, with optional absorbed log-domain shifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .grid import UniformGrid

__all__ = [
    "WeightedQuadraticCost",
    "KramersCost",
    "KolmogorovCost",
    "MsdMatrices",
    "build_msd_matrices",
    "msd_identity_residuals",
    "cost_weighted",
    "cost_kramers",
    "cost_kolmogorov",
    "zero_drift",
    "quadratic_drift",
    "KernelOperator",
    "gibbs_kernel",
]


def _pairwise_sum_square(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """All-pairs ``||phi_i + psi_j||^2`` as (k, m); clips tiny negative noise."""
    out = phi @ psi.T
    out *= 2.0
    out += np.einsum("if,if->i", phi, phi)[:, None]
    out += np.einsum("jf,jf->j", psi, psi)[None, :]
    np.maximum(out, 0.0, out=out)
    return out


class _FeatureCost:
    """Shared evaluation for costs of the form ||phi(x) + psi(y)||^2."""

    dim: int
    h: float

    def source_features(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def target_features(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_points(self, P: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.dim:
            raise ValueError(f"expected points in dimension {self.dim}, got {P.shape[1]}")
        return P

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Cost block c(X_i, Y_j) of shape (len(X), len(Y))."""
        X, Y = self._check_points(X), self._check_points(Y)
        return _pairwise_sum_square(self.source_features(X), self.target_features(Y))

    def __call__(self, x: np.ndarray, y: np.ndarray):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        X, Y = self._check_points(x), self._check_points(y)
        if X.shape != Y.shape:
            raise ValueError("x and y must have matching shapes")
        f = self.source_features(X) + self.target_features(Y)
        c = np.maximum(np.einsum("if,if->i", f, f), 0.0)
        return float(c[0]) if scalar else c


class WeightedQuadraticCost(_FeatureCost):
    """c(x, y) = <(A + hI)^{-1} (x-y), x-y> for symmetric PSD A."""

    def __init__(self, A: np.ndarray, h: float):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A contains non-finite entries")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
            raise ValueError("A must be symmetric within 1e-12")
        eigs = np.linalg.eigvalsh(A)
        if eigs.min() < -1e-12:
            raise ValueError(f"A must be positive semi-definite, min eigenvalue {eigs.min()}")
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        self.A = A
        self.h = float(h)
        self.dim = A.shape[0]
        B = A + h * np.eye(self.dim)
        try:
            self._chol = np.linalg.cholesky(B)
        except np.linalg.LinAlgError as exc:  # possible only for h ~ eigenvalue noise
            raise ValueError(f"A + hI is not positive definite: {exc}") from exc

    def _half_map(self, P: np.ndarray) -> np.ndarray:
        return solve_triangular(self._chol, P.T, lower=True).T

    def source_features(self, X: np.ndarray) -> np.ndarray:
        return self._half_map(X)

    def target_features(self, Y: np.ndarray) -> np.ndarray:
        return -self._half_map(Y)


def zero_drift(X: np.ndarray) -> np.ndarray:
    return np.zeros_like(X)


def quadratic_drift(coefficient: float) -> Callable[[np.ndarray], np.ndarray]:
    """Gradient of g(x) = coefficient * |x|^2 / 2."""
    c = float(coefficient)

    def grad(X: np.ndarray) -> np.ndarray:
        return c * X

    return grad


class KramersCost(_FeatureCost):
    """Explicit kinetic cost on (position, velocity) pairs.

    Points are (x, v) with x, v in R^{dtilde}; ``grad_g`` maps a batch of
    positions to the drift gradient at those positions.
    """

    _ROOT12 = math.sqrt(12.0)

    def __init__(self, grad_g: Callable[[np.ndarray], np.ndarray], h: float, dtilde: int = 1):
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        if dtilde < 1:
            raise ValueError(f"dtilde must be >= 1, got {dtilde}")
        self.grad_g = grad_g
        self.h = float(h)
        self.dtilde = int(dtilde)
        self.dim = 2 * self.dtilde

    def source_features(self, X: np.ndarray) -> np.ndarray:
        pos, vel = X[:, : self.dtilde], X[:, self.dtilde :]
        block1 = -vel + self.h * np.asarray(self.grad_g(pos), dtype=float)
        block2 = self._ROOT12 * (-pos / self.h - vel / 2.0)
        return np.hstack([block1, block2])

    def target_features(self, Y: np.ndarray) -> np.ndarray:
        pos, vel = Y[:, : self.dtilde], Y[:, self.dtilde :]
        block2 = self._ROOT12 * (pos / self.h - vel / 2.0)
        return np.hstack([vel.copy(), block2])


# ---------------------------------------------------------------------------
# Mean-squared-derivative matrices


def _scalar_m1(n: int) -> np.ndarray:
    M1 = np.zeros((n, n))
    for k in range(1, n + 1):
        for i in range(1, n + 1):
            if k + i >= n + 1:
                M1[k - 1, i - 1] = (-1) ** (n - k) * math.factorial(n + i - 1) / math.factorial(k + i - n - 1)
    return M1


def _scalar_m2(n: int) -> np.ndarray:
    M2 = np.zeros((n, n))
    for k in range(1, n + 1):
        for i in range(1, n + 1):
            M2[k - 1, i - 1] = math.factorial(k - 1) * math.comb(n + i - 1, k - 1)
    return M2


def _scalar_j1(n: int, h: float) -> np.ndarray:
    return np.diag([h**i for i in range(n)])


def _scalar_j2(n: int, h: float) -> np.ndarray:
    J2 = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            J2[i - 1, j - 1] = h ** (j - 1) / math.factorial(j - i)
    return J2


def _scalar_j1_prime(n: int, h: float) -> np.ndarray:
    return np.diag([i * h ** (i - 1) if i >= 1 else 0.0 for i in range(n)])


def _scalar_j2_prime(n: int, h: float) -> np.ndarray:
    J2p = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(max(i, 2), n + 1):
            J2p[i - 1, j - 1] = (j - 1) * h ** (j - 2) / math.factorial(j - i)
    return J2p


def _scalar_k_closed_form(n: int, h: float) -> np.ndarray:
    K = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            p = 2 * n - i - j
            if p >= 0:
                K[i - 1, j - 1] = (-1) ** (n - j) * h**p / math.factorial(p + 1)
    return K


def _scalar_j_closed_form(n: int, h: float) -> np.ndarray:
    J = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            J[i - 1, j - 1] = (-1) ** (j - i) * h ** (j - i) / math.factorial(j - i)
    return J


@dataclass(frozen=True)
class MsdMatrices:
    """Generating matrices of the mean-squared-derivative cost.

    All fields are (n*dtilde)-square: the scalar n x n forms expanded over
    blocks of size dtilde via a Kronecker product with the identity.
    ``j1_prime``/``j2_prime`` are entrywise h-derivatives, ``d`` selects the
    last block, and ``q`` is the subdiagonal shift; they feed the identity
    checks in :func:`msd_identity_residuals`.
    """

    n: int
    dtilde: int
    h: float
    m1: np.ndarray
    m2: np.ndarray
    m: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    j: np.ndarray
    k_h: np.ndarray
    d: np.ndarray
    q: np.ndarray
    j1_prime: np.ndarray
    j2_prime: np.ndarray


def build_msd_matrices(n: int, dtilde: int, h: float) -> MsdMatrices:
    """Assemble the matrices for chain length n and block dimension dtilde.

    Entries of M1, M2 are exact small integers for n <= 8; beyond that the
    factorial growth destroys floating accuracy, so larger n is rejected.
    """
    if n < 1:
        raise ValueError(f"chain length n must be >= 1, got {n}")
    if n > 8:
        raise ValueError(f"chain length n={n} rejected: factorial entries lose accuracy beyond n=8")
    if dtilde < 1:
        raise ValueError(f"dtilde must be >= 1, got {dtilde}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")

    m1 = _scalar_m1(n)
    m2 = _scalar_m2(n)
    # M = M1 M2^{-1} via a pivoted solve on the transposed system.
    m = np.linalg.solve(m2.T, m1.T).T
    j1 = _scalar_j1(n, h)
    j2 = _scalar_j2(n, h)
    j = np.linalg.solve(j2, j1)
    k_h = _scalar_k_closed_form(n, h)
    d = np.zeros((n, n))
    d[n - 1, n - 1] = 1.0
    q = np.zeros((n, n))
    for i in range(1, n):
        q[i, i - 1] = 1.0

    eye = np.eye(dtilde)
    expand = lambda S: np.kron(S, eye)
    return MsdMatrices(
        n=n,
        dtilde=dtilde,
        h=float(h),
        m1=expand(m1),
        m2=expand(m2),
        m=expand(m),
        j1=expand(j1),
        j2=expand(j2),
        j=expand(j),
        k_h=expand(k_h),
        d=expand(d),
        q=expand(q),
        j1_prime=expand(_scalar_j1_prime(n, h)),
        j2_prime=expand(_scalar_j2_prime(n, h)),
    )


def msd_identity_residuals(mats: MsdMatrices) -> dict[str, float]:
    """Relative residuals of the structural identities of the matrix family.

    Returns Frobenius-norm residuals, each scaled by the norm of the
    leading constituent term (the raw combinations can vanish identically,
    e.g. T1 = 0 for n = 1, so scaling by the combination itself would be
    meaningless).
    """
    n, h = mats.n, mats.h
    M, J1, J2 = mats.m, mats.j1, mats.j2
    J1p, J2p, D, Q = mats.j1_prime, mats.j2_prime, mats.d, mats.q
    hpow = h ** (2 - 2 * n)

    t1 = (2 * n - 1) * J1.T @ M @ J1 - 2 * h * J1p.T @ M @ J1 - hpow * J1.T @ M @ J2 @ D @ J2.T @ M @ J1
    t2 = (
        (1 - 2 * n) * J2.T @ M @ J1
        + h * (J2p.T @ M @ J1 + J2.T @ M @ J1p)
        - h * Q @ J2.T @ M @ J1
        + hpow * J2.T @ M @ J2 @ D @ J2.T @ M @ J1
    )
    t3 = (
        (2 * n - 1) * J2.T @ M @ J2
        - 2 * h * J2p.T @ M @ J2
        + 2 * h * Q @ J2.T @ M @ J2
        - hpow * J2.T @ M @ J2 @ D @ J2.T @ M @ J2
    )

    fro = np.linalg.norm
    scale1 = fro((2 * n - 1) * J1.T @ M @ J1)
    scale2 = fro(J2.T @ M @ J1)
    scale3 = fro((2 * n - 1) * J2.T @ M @ J2)

    trace_value = float(np.trace(D @ J2.T @ M @ J2))
    trace_expected = n**2 * mats.dtilde * h ** (2 * (n - 1))

    j_closed = np.kron(_scalar_j_closed_form(n, h), np.eye(mats.dtilde))
    k_from_inverse = h ** (2 * n - 2) * np.linalg.inv(J2.T @ M @ J1)

    return {
        "t1_antisymmetry": fro(t1 + t1.T) / scale1,
        "t2_vanishes": fro(t2) / scale2,
        "t3_antisymmetry": fro(t3 + t3.T) / scale3,
        "trace_identity": abs(trace_value - trace_expected) / abs(trace_expected),
        "j_closed_form": fro(mats.j - j_closed) / fro(j_closed),
        "k_h_inverse": fro(mats.k_h - k_from_inverse) / fro(mats.k_h),
    }


class KolmogorovCost(_FeatureCost):
    """Mean-squared-derivative cost h^{2-2n} (J1 y - J2 x)^T M (J1 y - J2 x)."""

    def __init__(self, mats: MsdMatrices):
        self.mats = mats
        self.h = mats.h
        self.dim = mats.n * mats.dtilde
        # M is positive definite (the cost vanishes only on the exact flow).
        scalar_m = mats.m[:: mats.dtilde, :: mats.dtilde]
        try:
            chol = np.linalg.cholesky(scalar_m)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"generating matrix M is not positive definite: {exc}") from exc
        scale = mats.h ** (1 - mats.n)
        L = np.kron(chol, np.eye(mats.dtilde))
        self._src = -scale * (mats.j2.T @ L)  # phi(x) = x^T (J2^T L) * (-scale)
        self._tgt = scale * (mats.j1.T @ L)

    def source_features(self, X: np.ndarray) -> np.ndarray:
        return X @ self._src

    def target_features(self, Y: np.ndarray) -> np.ndarray:
        return Y @ self._tgt


def cost_weighted(A: np.ndarray, h: float, x: np.ndarray, y: np.ndarray):
    return WeightedQuadraticCost(A, h)(x, y)


def cost_kramers(grad_g: Callable[[np.ndarray], np.ndarray], h: float, xv, yv, dtilde: int = 1):
    return KramersCost(grad_g, h, dtilde)(xv, yv)


def cost_kolmogorov(mats: MsdMatrices, x: np.ndarray, y: np.ndarray):
    return KolmogorovCost(mats)(x, y)


# ---------------------------------------------------------------------------
# Gibbs kernel


class KernelOperator:
    """Gibbs kernel exp((u_i + v_j - c(x_i, x_j)) / eps) as a linear operator.

    ``shift_u``/``shift_v`` are absorbed log-domain potentials in cost units;
    both default to zero, giving the plain kernel exp(-c/eps).  Dense mode
    materializes the cost matrix once (shared across shift updates) plus the
    shifted kernel; matrix-free mode regenerates rows in tiles of
    ``tile_rows`` for every product, in a fixed order so results are
    deterministic.
    """

    def __init__(
        self,
        cost: _FeatureCost,
        points: np.ndarray,
        eps: float,
        mode: str = "dense",
        tile_rows: int = 1024,
        shift_u: np.ndarray | None = None,
        shift_v: np.ndarray | None = None,
        memory_budget: int = 2**31,
        _cost_matrix: np.ndarray | None = None,
    ):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if mode not in ("dense", "matrix_free"):
            raise ValueError(f"mode must be 'dense' or 'matrix_free', got {mode!r}")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != cost.dim:
            raise ValueError(f"points have dimension {points.shape[1]}, cost expects {cost.dim}")
        self.cost = cost
        self.points = points
        self.eps = float(eps)
        self.mode = mode
        self.tile_rows = int(tile_rows)
        self.memory_budget = int(memory_budget)
        M = points.shape[0]
        self.shift_u = np.zeros(M) if shift_u is None else np.asarray(shift_u, dtype=float)
        self.shift_v = np.zeros(M) if shift_v is None else np.asarray(shift_v, dtype=float)
        if self.shift_u.shape != (M,) or self.shift_v.shape != (M,):
            raise ValueError("shift vectors must have one entry per grid point")

        self._cost_matrix = _cost_matrix
        self._kernel_matrix = None
        if mode == "dense":
            need = 2 * M * M * 8  # cost matrix + shifted kernel, float64
            if need > self.memory_budget:
                raise MemoryError(
                    f"dense kernel for M={M} needs {need / 1e9:.2f} GB "
                    f"(budget {self.memory_budget / 1e9:.2f} GB); use the matrix-free mode"
                )
            if self._cost_matrix is None:
                self._cost_matrix = cost.pairwise(points, points)
            z = (self.shift_u[:, None] + self.shift_v[None, :] - self._cost_matrix) / self.eps
            with np.errstate(over="raise"):
                self._kernel_matrix = np.exp(z)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def with_shifts(self, shift_u: np.ndarray, shift_v: np.ndarray) -> "KernelOperator":
        """Same kernel with replaced absorbed potentials (cost matrix shared)."""
        return KernelOperator(
            self.cost,
            self.points,
            self.eps,
            mode=self.mode,
            tile_rows=self.tile_rows,
            shift_u=shift_u,
            shift_v=shift_v,
            memory_budget=self.memory_budget,
            _cost_matrix=self._cost_matrix,
        )

    def _tiles(self):
        M = self.size
        for i0 in range(0, M, self.tile_rows):
            yield i0, min(i0 + self.tile_rows, M)

    def cost_block(self, i0: int, i1: int) -> np.ndarray:
        if self._cost_matrix is not None:
            return self._cost_matrix[i0:i1]
        return self.cost.pairwise(self.points[i0:i1], self.points)

    def kernel_block(self, i0: int, i1: int) -> np.ndarray:
        if self._kernel_matrix is not None:
            return self._kernel_matrix[i0:i1]
        z = (self.shift_u[i0:i1, None] + self.shift_v[None, :] - self.cost_block(i0, i1)) / self.eps
        with np.errstate(over="raise"):
            return np.exp(z)

    def dense(self) -> np.ndarray:
        if self._kernel_matrix is not None:
            return self._kernel_matrix
        return np.vstack([self.kernel_block(i0, i1) for i0, i1 in self._tiles()])

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if self._kernel_matrix is not None:
            return self._kernel_matrix @ vec
        out = np.empty(self.size)
        for i0, i1 in self._tiles():
            out[i0:i1] = self.kernel_block(i0, i1) @ vec
        return out

    def rmatvec(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if self._kernel_matrix is not None:
            return self._kernel_matrix.T @ vec
        out = np.zeros(self.size)
        for i0, i1 in self._tiles():
            out += self.kernel_block(i0, i1).T @ vec[i0:i1]
        return out

    def base_kernel_sum(self) -> float:
        """Sum of the unshifted kernel entries exp(-c/eps)."""
        total = 0.0
        for i0, i1 in self._tiles():
            total += float(np.exp(-self.cost_block(i0, i1) / self.eps).sum())
        return total


def gibbs_kernel(
    cost: _FeatureCost,
    grid: UniformGrid | np.ndarray,
    eps: float,
    mode: str = "dense",
    tile_rows: int = 1024,
    memory_budget: int = 2**31,
) -> KernelOperator:
    """Kernel operator for a cost on the points of a grid (or raw points)."""
    points = grid.points() if isinstance(grid, UniformGrid) else np.asarray(grid, dtype=float)
    return KernelOperator(cost, points, eps, mode=mode, tile_rows=tile_rows, memory_budget=memory_budget)
