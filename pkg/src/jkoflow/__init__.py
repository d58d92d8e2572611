"""Entropic minimizing-movement solver for drift-diffusion equations.

The package discretizes evolutions of the form

    d/dt rho = div(A grad rho + rho b)

as a variational time stepper: each step minimizes an entropy-regularized
transport term plus a driven free energy over probability weights on a fixed
grid.  Step costs are available for weighted quadratic transport, the kinetic
(position-velocity) dynamics, and degenerate diffusions along a chain of
iterated derivatives; the kinetic case ships with its exact Gaussian
reference solution for validation.

Submodules are imported lazily so the command-line entry point can pin BLAS
thread counts via environment variables before numpy is loaded.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # grid
    "UniformGrid": ".grid",
    "DiscreteMeasure": ".grid",
    "build_grid": ".grid",
    "second_moment": ".grid",
    "discrete_entropy": ".grid",
    "l1_distance": ".grid",
    "marginal": ".grid",
    "gaussian_measure": ".grid",
    "gaussian_cell_masses": ".grid",
    "write_measure_csv": ".grid",
    "read_measure_csv": ".grid",
    # free energy
    "InternalEnergy": ".free_energy",
    "FreeEnergySpec": ".free_energy",
    "pressure": ".free_energy",
    "discrete_free_energy": ".free_energy",
    "kl_prox": ".free_energy",
    "kl_prox_log": ".free_energy",
    # costs
    "WeightedQuadraticCost": ".costs",
    "KramersCost": ".costs",
    "KolmogorovCost": ".costs",
    "MsdMatrices": ".costs",
    "build_msd_matrices": ".costs",
    "msd_identity_residuals": ".costs",
    "cost_weighted": ".costs",
    "cost_kramers": ".costs",
    "cost_kolmogorov": ".costs",
    "zero_drift": ".costs",
    "quadratic_drift": ".costs",
    "KernelOperator": ".costs",
    "gibbs_kernel": ".costs",
    # entropic transport
    "ScalingState": ".entropic_ot",
    "TransportPlan": ".entropic_ot",
    "sinkhorn": ".entropic_ot",
    "kl_divergence": ".entropic_ot",
    "regularized_cost": ".entropic_ot",
    # scheme
    "SchemeConfig": ".jko",
    "SchemeRun": ".jko",
    "StepDiagnostics": ".jko",
    "InnerLoopError": ".jko",
    "SchemeError": ".jko",
    "jko_step": ".jko",
    "run_scheme": ".jko",
    "interpolate": ".jko",
    # exact kinetic solution
    "GreenParams": ".kramers",
    "s_functions": ".kramers",
    "green_density": ".kramers",
    "sample_on_grid": ".kramers",
    "green_l1_error": ".kramers",
    # configuration
    "RunConfig": ".config",
    "parse_config": ".config",
    "parse_config_text": ".config",
    "render_config": ".config",
}


def __getattr__(name):
    try:
        module_name = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    module = importlib.import_module(module_name, __name__)
    return getattr(module, name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
