"""Ultra-weak space-time DPG discretization of the 1D heat equation.

Typical use::

    from heatdpg import experiment1, run, rate_regression
    records = run(experiment1(), scaling="equal", uniform=True, ndof_max=5000)
    rate_regression(records, "eta2")
"""

from .adaptivity import AdaptConfig, Indicator, RunRecord, adapt_loop, estimate, lift_residual, mark, pythagoras_check
from .assembly import NormalSystem, assemble, data_oscillation, initial_mismatch, local_b, local_gram, local_load
from .discretization import DofMap, QuadRule, TensorBasis, build_dof_map, gauss_rule, graded_rule, test_basis
from .experiments import error_metrics, rate_regression, read_csv, run, write_csv
from .mesh import EQUAL, PARABOLIC, Mesh, MeshError, new_uniform, refine, validate
from .problems import Problem, experiment1, experiment2, experiment3, experiment4, zero_problem
from .solver import Solution, evaluate, galerkin_residual, solve

__version__ = "0.1.0"


def __getattr__(name):
    # scikit-learn is only imported when the estimator facade is requested
    if name == "SpaceTimeDPG":
        from .estimator import SpaceTimeDPG

        return SpaceTimeDPG
    raise AttributeError(f"module 'heatdpg' has no attribute {name!r}")


__all__ = [
    "EQUAL",
    "PARABOLIC",
    "AdaptConfig",
    "DofMap",
    "Indicator",
    "Mesh",
    "MeshError",
    "NormalSystem",
    "Problem",
    "QuadRule",
    "RunRecord",
    "Solution",
    "SpaceTimeDPG",
    "TensorBasis",
    "adapt_loop",
    "assemble",
    "build_dof_map",
    "data_oscillation",
    "error_metrics",
    "estimate",
    "evaluate",
    "experiment1",
    "experiment2",
    "experiment3",
    "experiment4",
    "galerkin_residual",
    "gauss_rule",
    "graded_rule",
    "initial_mismatch",
    "lift_residual",
    "local_b",
    "local_gram",
    "local_load",
    "mark",
    "new_uniform",
    "pythagoras_check",
    "rate_regression",
    "read_csv",
    "refine",
    "run",
    "solve",
    "test_basis",
    "validate",
    "write_csv",
    "zero_problem",
]
