"""Feasible higher-order Taylor-model solver for smooth inequality-constrained
minimization, with a globally solved dual subproblem and a benchmark harness.
"""

from ._kernels import BACKEND
from .linalg import CholFactor, NotPositiveDefinite, cholesky, solve
from .mta import (MtaConfig, MtaTrace, default_config, kkt_measure,
                  lyapunov_diag, mta_step, run_adaptive, run_fixed)
from .problem import (InfeasibleStart, ProblemInstance, TaylorData,
                      generate_benchmark, generate_convex_benchmark,
                      load_instance, max_violation, save_instance,
                      taylor_data, taylor_value)
from .subproblem import (DualState, DualTolerances, InfeasibleModel,
                         SubproblemModel, SubproblemSolution, build_model,
                         dual_gradient, dual_value, duality_gap,
                         initialize_dual, lagrangian, solve_dual)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CholFactor", "NotPositiveDefinite", "cholesky", "solve",
    "MtaConfig", "MtaTrace", "default_config", "kkt_measure", "lyapunov_diag",
    "mta_step", "run_adaptive", "run_fixed", "InfeasibleStart",
    "ProblemInstance", "TaylorData", "generate_benchmark",
    "generate_convex_benchmark", "load_instance", "max_violation",
    "save_instance", "taylor_data", "taylor_value", "DualState",
    "DualTolerances", "InfeasibleModel", "SubproblemModel",
    "SubproblemSolution", "build_model", "dual_gradient", "dual_value",
    "duality_gap", "initialize_dual", "lagrangian", "solve_dual",
]
