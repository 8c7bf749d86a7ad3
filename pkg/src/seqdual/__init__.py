"""Sequential quasilinearization for control-constrained optimal control.

Each outer iteration linearizes the dynamics and solves the resulting
linear-quadratic subproblem either through its concave dual (``seq_dual``)
or through a primal interior-point method (``seq_primal``).
"""

from .benchmarks import EXAMPLE_IDS, make_example
from .core import CostateTrajectory, NlpProblem, TimeGrid, Trajectory
from .diagnostics import check_h1, duality_gap_audit, np_kkt_residual
from .expr import load_problem, problem_from_dict
from .seqopt import (OuterConfig, OuterLoopError, SolveReport, solve, solve_algorithm1,
                     solve_algorithm2)

__version__ = "0.1.0"

__all__ = [
    "EXAMPLE_IDS", "make_example", "CostateTrajectory", "NlpProblem", "TimeGrid", "Trajectory",
    "check_h1", "duality_gap_audit", "np_kkt_residual", "load_problem", "problem_from_dict",
    "OuterConfig", "OuterLoopError", "SolveReport", "solve", "solve_algorithm1",
    "solve_algorithm2",
]
