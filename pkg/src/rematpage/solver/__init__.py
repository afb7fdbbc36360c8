"""Deciding schedule MILPs: built-in exact search and an LP-file bridge."""

from .bnb import (
    Assignment,
    ModelError,
    SolveLimits,
    SolveResult,
    Status,
    complete_assignment,
    solve_exact,
)
from .lp import (
    LpFormatError,
    SolutionError,
    format_solution,
    parse_lp,
    parse_solution,
    solve_external,
    write_lp,
)

__all__ = [
    "Assignment",
    "ModelError",
    "SolveLimits",
    "SolveResult",
    "Status",
    "complete_assignment",
    "solve_exact",
    "LpFormatError",
    "SolutionError",
    "format_solution",
    "parse_lp",
    "parse_solution",
    "solve_external",
    "write_lp",
]
