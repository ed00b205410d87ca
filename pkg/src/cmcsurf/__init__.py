"""Constant-mean-curvature data from a convex variational principle.

Charts (flat torus, hyperbolic disk patch, Bolza octagon), the energy and its
derivatives, Newton-Krylov solvers, verification oracles and a CLI.
"""

__version__ = "0.1.0"

from .geometry import (BACKENDS, Chart, ChartError, Params, build_bolza_octagon,  # noqa: E402
                       build_flat_torus_patch, build_hyperbolic_disk_patch)
from .fields import BetaClass, WeightedField, bolza_beta, constant_beta, zero_beta  # noqa: E402
from .donaldson import (DivergingIterate, Perturbation, Solution, SolveState,  # noqa: E402
                        functional, gradient, hessian_apply)
from .solver import (SolverConfig, constrained_solve, continuation_solve,  # noqa: E402
                     min_eig_estimate, newton_solve)

__all__ = [
    "BACKENDS", "Chart", "ChartError", "Params", "build_bolza_octagon", "build_flat_torus_patch",
    "build_hyperbolic_disk_patch", "BetaClass", "WeightedField", "bolza_beta", "constant_beta",
    "zero_beta", "DivergingIterate", "Perturbation", "Solution", "SolveState", "functional",
    "gradient", "hessian_apply", "SolverConfig", "constrained_solve", "continuation_solve",
    "min_eig_estimate", "newton_solve",
]
