"""Generic numerical routines: log-sum-exp minimisation, relative-entropy
projection, linear programming and a barrier method for log-sum-exp
constrained programs."""

from .barrier import BarrierResult, LseProgram, ProgramBuilder, solve_barrier
from .config import DEFAULT_CONFIG, SolverConfig
from .kl import KlResult, kl_project, kl_project_batch
from .lp import LPResult, solve_lp, solve_lp_general
from .lse import (
    LseResult,
    LseTerms,
    MaxLseResult,
    UnboundedError,
    minimize_lse,
    minimize_max_lse,
)

__all__ = [
    "BarrierResult",
    "DEFAULT_CONFIG",
    "KlResult",
    "LPResult",
    "LseProgram",
    "LseResult",
    "LseTerms",
    "MaxLseResult",
    "ProgramBuilder",
    "SolverConfig",
    "UnboundedError",
    "kl_project",
    "kl_project_batch",
    "minimize_lse",
    "minimize_max_lse",
    "solve_barrier",
    "solve_lp",
    "solve_lp_general",
]
