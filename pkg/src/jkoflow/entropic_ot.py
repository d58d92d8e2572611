"""Entropic optimal transport between fixed marginals via alternating scaling.

The solver iterates ``a = mu / (K b)``, ``b = nu / (K^T a)`` on the Gibbs
kernel.  When scaling factors leave ``[1/threshold, threshold]`` they are
absorbed into the kernel's log-domain shift vectors (if enabled), which keeps
all stored quantities representable at small regularization.  Plans are kept
in factored form ``pi_ij = a_i K_ij b_j`` where ``K`` carries the absorbed
shifts; entropy-like sums are evaluated through log-potentials rather than
entrywise logs, so they remain exact for plans whose entries underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import KernelOperator
from .grid import DiscreteMeasure

__all__ = [
    "ScalingState",
    "TransportPlan",
    "sinkhorn",
    "kl_divergence",
    "regularized_cost",
]


def _weights(m) -> np.ndarray:
    return m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=float)


def _safe_div(num: np.ndarray, den: np.ndarray, cap: float) -> np.ndarray:
    """num/den with 0/0 -> 0 and x/0 (x>0) -> cap; results clipped at cap."""
    out = np.zeros_like(num)
    pos = den > 0
    np.divide(num, den, out=out, where=pos)
    out[~pos & (num > 0)] = cap
    np.minimum(out, cap, out=out)
    return out


def _out_of_range(x: np.ndarray, threshold: float) -> bool:
    pos = x[x > 0]
    if pos.size == 0:
        return False
    return bool(pos.max() >= threshold or pos.min() <= 1.0 / threshold)


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)


def _absorb(op: KernelOperator, a: np.ndarray, b: np.ndarray):
    """Fold current scalings into the kernel's shift vectors; reset to ones."""
    u = op.shift_u + op.eps * _safe_log(a)
    v = op.shift_v + op.eps * _safe_log(b)
    return op.with_shifts(u, v), np.ones_like(a), np.ones_like(b)


@dataclass
class ScalingState:
    """Diagnostics of one scaling solve."""

    a: np.ndarray
    b: np.ndarray
    shift_u: np.ndarray
    shift_v: np.ndarray
    iterations: int
    residual_mu: float
    residual_nu: float
    residual_history: np.ndarray
    absorptions: int
    converged: bool


@dataclass
class TransportPlan:
    """Factored coupling pi_ij = a_i K_ij b_j (K carries absorbed shifts)."""

    kernel: KernelOperator
    a: np.ndarray
    b: np.ndarray

    @property
    def eps(self) -> float:
        return self.kernel.eps

    def log_scalings(self) -> tuple[np.ndarray, np.ndarray]:
        """Total log-potentials: pi_ij = exp(La_i + Lb_j - c_ij/eps)."""
        la = _safe_log(self.a) + self.kernel.shift_u / self.eps
        lb = _safe_log(self.b) + self.kernel.shift_v / self.eps
        return la, lb

    def first_marginal(self) -> np.ndarray:
        return self.a * self.kernel.matvec(self.b)

    def second_marginal(self) -> np.ndarray:
        return self.b * self.kernel.rmatvec(self.a)

    def total_mass(self) -> float:
        return float(self.first_marginal().sum())

    def to_dense(self) -> np.ndarray:
        blocks = []
        for i0, i1 in self.kernel._tiles():
            blocks.append(self.a[i0:i1, None] * self.kernel.kernel_block(i0, i1) * self.b[None, :])
        return np.vstack(blocks)

    def transport_cost(self) -> float:
        """Sum of c_ij pi_ij, accumulated over row tiles."""
        total = 0.0
        for i0, i1 in self.kernel._tiles():
            pi = self.a[i0:i1, None] * self.kernel.kernel_block(i0, i1) * self.b[None, :]
            total += float(np.sum(self.kernel.cost_block(i0, i1) * pi))
        return total

    def plan_entropy(self, tile_volume: float) -> float:
        """Sum of pi log(pi / tile_volume^2), via log-potentials.

        Using log pi = La + Lb - c/eps turns the entrywise sum into marginal
        sums plus the transport cost, which stays accurate when individual
        entries underflow.
        """
        la, lb = self.log_scalings()
        r = self.first_marginal()
        s = self.second_marginal()
        mass = float(r.sum())
        plogp = float(np.where(r > 0, la * r, 0.0).sum() + np.where(s > 0, lb * s, 0.0).sum())
        plogp -= self.transport_cost() / self.eps
        return plogp - 2.0 * math.log(tile_volume) * mass


def kl_divergence(plan, kernel: KernelOperator) -> float:
    """KL(pi || K) = sum pi log(pi/K) - pi + K against the unshifted kernel.

    ``plan`` may be a TransportPlan or a dense matrix.  Entries where the
    numeric kernel is exactly zero while the plan is positive yield +inf.
    """
    if isinstance(plan, TransportPlan):
        la, lb = plan.log_scalings()
        r, s = plan.first_marginal(), plan.second_marginal()
        plogp_over_k = float(np.where(r > 0, la * r, 0.0).sum() + np.where(s > 0, lb * s, 0.0).sum())
        return plogp_over_k - float(r.sum()) + kernel.base_kernel_sum()

    pi = np.asarray(plan, dtype=float)
    if pi.shape != (kernel.size, kernel.size):
        raise ValueError(f"plan shape {pi.shape} does not match kernel size {kernel.size}")
    total = 0.0
    for i0, i1 in kernel._tiles():
        c = kernel.cost_block(i0, i1)
        k = np.exp(-c / kernel.eps)
        block = pi[i0:i1]
        pos = block > 0
        if np.any(pos & (k == 0.0)):
            return math.inf
        # log K = -c/eps exactly; avoids the exp/log round trip.
        with np.errstate(invalid="ignore"):
            total += float(np.sum(np.where(pos, block * (_safe_log(block) + c / kernel.eps) - block, 0.0)))
        total += float(k.sum())
    return total


def regularized_cost(plan: TransportPlan, tile_volume: float) -> float:
    """Objective sum c pi + eps * sum pi log(pi / tile_volume^2)."""
    return plan.transport_cost() + plan.eps * plan.plan_entropy(tile_volume)


def sinkhorn(
    kernel: KernelOperator,
    mu,
    nu,
    tol: float = 1e-8,
    max_iter: int = 10000,
    log_domain: bool = False,
    absorb_threshold: float = 1e50,
) -> tuple[TransportPlan, ScalingState]:
    """Alternating scaling for fixed marginals, a-update first.

    Runs until both L1 marginal residuals fall below ``tol`` or ``max_iter``
    is hit; non-convergence is reported in the returned state rather than
    raised, so callers can decide.  Without ``log_domain``, scaling factors
    leaving [1/threshold, threshold] raise instead of being absorbed.
    """
    mu, nu = _weights(mu), _weights(nu)
    M = kernel.size
    if mu.shape != (M,) or nu.shape != (M,):
        raise ValueError("marginals must match the kernel size")
    if np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(mu.sum() - nu.sum()) > 1e-10 * max(mu.sum(), nu.sum()):
        raise ValueError(f"marginal masses differ: {mu.sum()} vs {nu.sum()}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    op = kernel
    if np.any(op.shift_u != 0) or np.any(op.shift_v != 0):
        op = op.with_shifts(np.zeros(M), np.zeros(M))
    a = np.ones(M)
    b = np.ones(M)
    cap = float(absorb_threshold)
    absorptions = 0
    history = []
    converged = False
    res_mu = res_nu = math.inf

    def absorb_or_fail(vec_name):
        nonlocal op, a, b, absorptions
        if not log_domain:
            raise RuntimeError(
                f"scaling factor {vec_name} left [{1.0 / cap:g}, {cap:g}]; "
                "enable log-domain absorption to continue"
            )
        op, a, b = _absorb(op, a, b)
        absorptions += 1

    s = op.matvec(b)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        a = _safe_div(mu, s, cap)
        if _out_of_range(a, cap):
            absorb_or_fail("a")
        t = op.rmatvec(a)
        res_nu = float(np.abs(b * t - nu).sum())
        b = _safe_div(nu, t, cap)
        if _out_of_range(b, cap):
            absorb_or_fail("b")
        s = op.matvec(b)
        res_mu = float(np.abs(a * s - mu).sum())
        history.append(max(res_mu, res_nu))
        if res_mu <= tol and res_nu <= tol:
            converged = True
            break

    plan = TransportPlan(op, a, b)
    state = ScalingState(
        a=a,
        b=b,
        shift_u=op.shift_u,
        shift_v=op.shift_v,
        iterations=iterations,
        residual_mu=res_mu,
        residual_nu=res_nu,
        residual_history=np.asarray(history),
        absorptions=absorptions,
        converged=converged,
    )
    return plan, state
