"""Minimizing-movement time stepping for drift-diffusion evolutions.

Each step solves

    rho_next = argmin  (1/2h) W(rho_prev, rho) + F(rho)

where W is the entropy-regularized transport value for the step cost and F a
driven free energy.  In scaling form this is a KL projection problem: the
inner loop alternates the marginal update ``a = rho_prev / (K b)`` with a
pointwise KL prox for the free energy, on the same stabilized kernel used by
:mod:`.entropic_ot`.  The kernel normalization drops out of the fixed point
(the scalings absorb it), so the plain Gibbs kernel is used throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .costs import KernelOperator
from .entropic_ot import (
    TransportPlan,
    _absorb,
    _out_of_range,
    _safe_div,
    _safe_log,
    regularized_cost,
)
from .free_energy import FreeEnergySpec, discrete_free_energy, kl_prox_log
from .grid import DiscreteMeasure, UniformGrid, discrete_entropy, second_moment

__all__ = [
    "SchemeConfig",
    "StepDiagnostics",
    "SchemeRun",
    "InnerLoopError",
    "SchemeError",
    "jko_step",
    "run_scheme",
    "interpolate",
]


@dataclass(frozen=True)
class SchemeConfig:
    """Time discretization and inner-solver controls for one scheme run."""

    h: float
    eps: float
    horizon: float
    tol: float = 1e-8
    max_iter: int = 10000
    log_domain: bool = True
    absorb_threshold: float = 1e50

    def __post_init__(self):
        for name in ("h", "eps", "horizon", "tol"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not self.absorb_threshold > 1:
            raise ValueError(
                f"absorb_threshold must exceed 1, got {self.absorb_threshold}"
            )
        n = round(self.horizon / self.h)
        if n < 1 or abs(n * self.h - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(
                f"horizon {self.horizon} is not an integer multiple of h {self.h}"
            )
        if self.scaling_ratio > 1.0:
            warnings.warn(
                f"eps |log eps| / h^2 = {self.scaling_ratio:.3g} exceeds 1; "
                "the regularization bias may dominate the time-step error",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.h)

    @property
    def scaling_ratio(self) -> float:
        """eps |log eps| / h^2; should stay at or below order one."""
        return self.eps * abs(math.log(self.eps)) / self.h**2


@dataclass
class StepDiagnostics:
    iterations: int
    residual: float
    change: float
    absorptions: int
    mass_drift: float
    objective: float


class InnerLoopError(RuntimeError):
    """Inner scaling loop failed to reach tolerance within max_iter."""

    def __init__(self, iterations: int, residual: float, change: float):
        self.iterations = iterations
        self.residual = residual
        self.change = change
        super().__init__(
            f"inner loop did not converge in {iterations} iterations "
            f"(marginal residual {residual:.3e}, iterate change {change:.3e}); "
            "raise max_iter or loosen tol"
        )


def jko_step(
    rho_prev: DiscreteMeasure,
    energy: FreeEnergySpec,
    kernel: KernelOperator,
    h: float,
    tol: float = 1e-8,
    max_iter: int = 10000,
    log_domain: bool = True,
    absorb_threshold: float = 1e50,
) -> tuple[DiscreteMeasure, TransportPlan, StepDiagnostics]:
    """One minimizing-movement step; raises InnerLoopError on non-convergence.

    The returned measure is the KL-prox output ``b * (K^T a)`` renormalized to
    unit mass; the pre-normalization mass defect is reported as ``mass_drift``.
    """
    if rho_prev.grid != energy.grid:
        raise ValueError("rho_prev and energy live on different grids")
    if kernel.size != rho_prev.grid.size:
        raise ValueError(
            f"kernel size {kernel.size} does not match grid size {rho_prev.grid.size}"
        )
    if not (np.isfinite(h) and h > 0):
        raise ValueError(f"h must be a positive finite number, got {h}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    eps = kernel.eps
    kappa = 2.0 * h / eps
    rho_p = rho_prev.weights
    M = kernel.size

    op = kernel
    if np.any(op.shift_u != 0) or np.any(op.shift_v != 0):
        op = op.with_shifts(np.zeros(M), np.zeros(M))
    a = np.ones(M)
    b = np.ones(M)
    cap = float(absorb_threshold)
    log_cap = math.log(cap)
    absorptions = 0

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
    rho = rho_p
    rho_last = None
    res = change = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        a = _safe_div(rho_p, s, cap)
        if _out_of_range(a, cap):
            absorb_or_fail("a")
        q = op.rmatvec(a)
        log_q = _safe_log(q)
        log_rho = kl_prox_log(energy, log_q - op.shift_v / eps, kappa)
        rho = np.exp(log_rho)
        with np.errstate(invalid="ignore"):
            expo = np.where(q > 0, log_rho - log_q, 0.0)
        b = np.exp(np.minimum(expo, log_cap))
        if _out_of_range(b, cap):
            absorb_or_fail("b")
        s = op.matvec(b)
        res = float(np.abs(a * s - rho_p).sum())
        change = math.inf if rho_last is None else float(np.abs(rho - rho_last).sum())
        rho_last = rho
        if res <= tol and change <= tol:
            converged = True
            break
    if not converged:
        raise InnerLoopError(iterations, res, change)

    measure = DiscreteMeasure.from_weights(rho_prev.grid, rho)
    plan = TransportPlan(op, a, b)
    diag = StepDiagnostics(
        iterations=iterations,
        residual=res,
        change=change,
        absorptions=absorptions,
        mass_drift=abs(float(rho.sum()) - float(rho_p.sum())),
        objective=regularized_cost(plan, rho_prev.grid.cell_volume),
    )
    return measure, plan, diag


@dataclass
class SchemeRun:
    """Trajectory of one scheme run; arrays are indexed by step."""

    grid: UniformGrid
    config: SchemeConfig
    iterates: list  # N+1 measures, iterates[0] is the initial datum
    times: np.ndarray  # N+1 values 0, h, ..., N h
    free_energy: np.ndarray  # N+1
    entropy: np.ndarray  # N+1
    second_moment: np.ndarray  # N+1
    transport_objective: np.ndarray  # N, regularized transport value per step
    inner_iterations: np.ndarray  # N
    residuals: np.ndarray  # N
    mass_drift: np.ndarray  # N

    @property
    def n_steps(self) -> int:
        return len(self.iterates) - 1


class SchemeError(RuntimeError):
    """A step failed; carries the completed part of the run."""

    def __init__(self, partial: SchemeRun, failed_step: int, cause: Exception):
        self.partial = partial
        self.failed_step = failed_step
        super().__init__(
            f"scheme aborted at step {failed_step} of {partial.config.n_steps}: {cause}"
        )


def _assemble_run(grid, config, iterates, energy, objectives, inner_iters, residuals, drifts):
    fe = np.array([discrete_free_energy(energy, m) for m in iterates])
    ent = np.array([discrete_entropy(m) for m in iterates])
    sm = np.array([second_moment(m) for m in iterates])
    times = config.h * np.arange(len(iterates))
    return SchemeRun(
        grid=grid,
        config=config,
        iterates=list(iterates),
        times=times,
        free_energy=fe,
        entropy=ent,
        second_moment=sm,
        transport_objective=np.asarray(objectives, dtype=float),
        inner_iterations=np.asarray(inner_iters, dtype=int),
        residuals=np.asarray(residuals, dtype=float),
        mass_drift=np.asarray(drifts, dtype=float),
    )


def run_scheme(
    rho0: DiscreteMeasure,
    energy: FreeEnergySpec,
    kernel: KernelOperator,
    config: SchemeConfig,
) -> SchemeRun:
    """March n_steps minimizing-movement steps from rho0.

    On an inner-loop failure the completed prefix is attached to the raised
    SchemeError together with the 1-based index of the failed step.
    """
    if rho0.grid != energy.grid:
        raise ValueError("rho0 and energy live on different grids")
    if abs(kernel.eps - config.eps) > 1e-12 * config.eps:
        raise ValueError(
            f"kernel eps {kernel.eps} does not match config eps {config.eps}"
        )
    iterates = [rho0]
    objectives, inner_iters, residuals, drifts = [], [], [], []
    for step in range(1, config.n_steps + 1):
        try:
            nxt, _plan, diag = jko_step(
                iterates[-1],
                energy,
                kernel,
                config.h,
                tol=config.tol,
                max_iter=config.max_iter,
                log_domain=config.log_domain,
                absorb_threshold=config.absorb_threshold,
            )
        except (InnerLoopError, RuntimeError) as exc:
            partial = _assemble_run(
                rho0.grid, config, iterates, energy,
                objectives, inner_iters, residuals, drifts,
            )
            raise SchemeError(partial, step, exc) from exc
        iterates.append(nxt)
        objectives.append(diag.objective)
        inner_iters.append(diag.iterations)
        residuals.append(diag.residual)
        drifts.append(diag.mass_drift)
    return _assemble_run(
        rho0.grid, config, iterates, energy, objectives, inner_iters, residuals, drifts
    )


def interpolate(run: SchemeRun, t: float) -> DiscreteMeasure:
    """Piecewise-constant interpolant: the step-(n+1) iterate on [nh, (n+1)h).

    At t = 0 this is the first minimizer (not the initial datum); at the
    horizon it is the final iterate.  Times outside [0, horizon] are errors.
    """
    T = run.config.horizon
    slack = 1e-9 * max(1.0, T)
    if not (-slack <= t <= T + slack):
        raise ValueError(f"time {t} outside the computed horizon [0, {T}]")
    t = min(max(t, 0.0), T)
    n = min(int(math.floor(t / run.config.h)), run.n_steps - 1)
    return run.iterates[n + 1]
