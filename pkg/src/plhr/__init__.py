"""Preconditioned locally harmonic residual eigensolvers for interior eigenpairs of Hermitian pencils."""

from .basenull import BaseNullResult, base_null_solve, convergence_bound
from .harness import ExperimentConfig, RunReport, emit_history, reproduce_table, run_experiment
from .multigrid import av_mg_apply, av_mg_operator, build_hierarchy, inv_mg_apply, inv_mg_operator
from .operators import (IdentityOperator, Operator, Pencil, SpectrumOracle, dense_av_inverse,
                        fd_laplacian_2d, fd_laplacian_spectrum, fe_laplacian_q1, matrix_operator,
                        perturbed_preconditioner)
from .solvers import (EigenResult, SolverConfig, bgd_solve, bplhr_real_solve, bplhr_solve,
                      plhr_solve)

__all__ = [
    "BaseNullResult", "base_null_solve", "convergence_bound",
    "ExperimentConfig", "RunReport", "emit_history", "reproduce_table", "run_experiment",
    "av_mg_apply", "av_mg_operator", "build_hierarchy", "inv_mg_apply", "inv_mg_operator",
    "IdentityOperator", "Operator", "Pencil", "SpectrumOracle", "dense_av_inverse",
    "fd_laplacian_2d", "fd_laplacian_spectrum", "fe_laplacian_q1", "matrix_operator",
    "perturbed_preconditioner",
    "EigenResult", "SolverConfig", "bgd_solve", "bplhr_real_solve", "bplhr_solve", "plhr_solve",
]
