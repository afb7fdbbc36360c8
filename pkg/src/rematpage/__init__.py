"""Energy-optimal rematerialization and paging schedules for training graphs.

Typical use::

    g = build_training_graph(GraphSpec("chain", 4))
    cg = attach(g, synth_profile(g, "mixed-cheap-expensive", seed=0), mu_ram=12_000)
    inst = build_milp(cg)
    res = solve_exact(inst)
    s = from_assignment(res.assignment, inst)
    plan = hide_latency(emit_plan(s, cg), cg)
"""

from .baselines import BaselineResult, capuchin_greedy, chen_sqrt, solve_restricted
from .costmodel import (
    CostedGraph,
    CostProfile,
    attach,
    load_profile,
    mixed_eight_profile,
    save_profile,
    synth_profile,
)
from .graph import GraphSpec, TrainingGraph, build_training_graph, load_graph, mixed_eight_spec, save_graph, validate
from .milp import MilpInstance, build_milp, restrict
from .oracle import OracleResult, brute_force
from .planner import ExecutionPlan, SimReport, emit_plan, hide_latency, simulate
from .schedule import Metrics, Schedule, evaluate, from_assignment, load_schedule, save_schedule, verify
from .solver import (
    Assignment,
    SolveLimits,
    SolveResult,
    Status,
    parse_lp,
    parse_solution,
    solve_exact,
    solve_external,
    write_lp,
)

__all__ = [
    "BaselineResult",
    "capuchin_greedy",
    "chen_sqrt",
    "solve_restricted",
    "CostedGraph",
    "CostProfile",
    "attach",
    "load_profile",
    "mixed_eight_profile",
    "save_profile",
    "synth_profile",
    "GraphSpec",
    "TrainingGraph",
    "build_training_graph",
    "load_graph",
    "mixed_eight_spec",
    "save_graph",
    "validate",
    "MilpInstance",
    "build_milp",
    "restrict",
    "OracleResult",
    "brute_force",
    "ExecutionPlan",
    "SimReport",
    "emit_plan",
    "hide_latency",
    "simulate",
    "Metrics",
    "Schedule",
    "evaluate",
    "from_assignment",
    "load_schedule",
    "save_schedule",
    "verify",
    "Assignment",
    "SolveLimits",
    "SolveResult",
    "Status",
    "parse_lp",
    "parse_solution",
    "solve_exact",
    "solve_external",
    "write_lp",
]
