"""Global solver on the sphere: assembly, solves, continuation, checks."""

from .grid import SphereGrid
from .solver import (
    DEFAULT_SCHEDULE,
    TRACE_COLUMNS,
    AngleReport,
    EstimateTrace,
    PotentialField,
    ProblemData,
    SolverParams,
    Twist,
    assemble_problem,
    cone_asymptotics_check,
    continuation_run,
    degree_k_plus_d,
    dump_field,
    gauss_curvature_nodes,
    max_principle_bound,
    min_bisectional,
    ricci_residual,
    solve_star_epsilon,
    solved_density,
)

__all__ = [
    "SphereGrid",
    "DEFAULT_SCHEDULE",
    "TRACE_COLUMNS",
    "AngleReport",
    "EstimateTrace",
    "PotentialField",
    "ProblemData",
    "SolverParams",
    "Twist",
    "assemble_problem",
    "cone_asymptotics_check",
    "continuation_run",
    "degree_k_plus_d",
    "dump_field",
    "gauss_curvature_nodes",
    "max_principle_bound",
    "min_bisectional",
    "ricci_residual",
    "solve_star_epsilon",
    "solved_density",
]
