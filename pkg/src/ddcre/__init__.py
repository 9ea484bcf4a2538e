"""Parallel error estimation in constitutive relation for substructured elasticity."""
from .elasticity import HookeTensor, LoadSpec, assemble_system, hooke_plane_stress, solve_monolithic
from .errors import (AdmissibilityViolation, ConfigError, DDCREError, EETFailure,
                     FredholmViolation, InvalidParameter, InvalidPartition, InvalidReference,
                     NonConvergence, RankDeficiency)
from .estimator import (EstimateReport, RecoveryPipeline, ReferenceSolution, ecr_global,
                        ecr_subdomain, estimate_at_iteration, sequential_estimate, true_error)
from .harness import ExperimentConfig, compare_reports, run_experiment
from .mesh import BoundaryTag, build_gamma_mesh, build_rect_mesh, partition_mesh
from .solvers import SolverState, bdd_solve, feti_solve, solve
from .substructuring import InterfaceComm, build_subdomains, operators_for

__all__ = [
    "AdmissibilityViolation", "BoundaryTag", "ConfigError", "DDCREError", "EETFailure",
    "EstimateReport", "ExperimentConfig", "FredholmViolation", "HookeTensor", "InterfaceComm",
    "InvalidParameter", "InvalidPartition", "InvalidReference", "LoadSpec", "NonConvergence",
    "RankDeficiency", "RecoveryPipeline", "ReferenceSolution", "SolverState",
    "assemble_system", "bdd_solve", "build_gamma_mesh", "build_rect_mesh",
    "build_subdomains", "compare_reports", "ecr_global", "ecr_subdomain",
    "estimate_at_iteration", "feti_solve", "hooke_plane_stress", "operators_for",
    "partition_mesh", "run_experiment", "sequential_estimate", "solve", "solve_monolithic",
    "true_error",
]
