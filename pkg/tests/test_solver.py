import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import budget_at, checked
from rematpage.bench import make_instance
from rematpage.costmodel import attach, mixed_eight_profile
from rematpage.graph import GraphSpec, build_training_graph
from rematpage.milp import build_milp, restrict
from rematpage.oracle import brute_force
from rematpage.schedule import diagonal_schedule
from rematpage.solver import (
    LpFormatError,
    ModelError,
    SolutionError,
    SolveLimits,
    Status,
    format_solution,
    parse_lp,
    parse_solution,
    solve_exact,
    solve_external,
    write_lp,
)


def test_full_memory_depth_two():
    cg = make_instance("chain", 2, "mixed", 3).base
    inst = build_milp(cg)
    res = solve_exact(inst)
    assert res.status is Status.OPTIMAL
    assert res.objective == cg.energy_floor()
    s = checked(res, inst, cg)
    assert np.array_equal(s.R, np.eye(5, dtype=bool))
    assert not s.MIN.any() and not s.MOUT.any()


def test_budget_below_single_output_is_infeasible():
    base = make_instance("chain", 2, "mixed", 3).base
    cg = base.with_budget(base.memory_floor() - 1)
    assert solve_exact(build_milp(cg)).status is Status.INFEASIBLE
    assert solve_external(build_milp(cg)).status is Status.INFEASIBLE


@pytest.mark.parametrize("frac", [0.8, 0.9, 1.0])
def test_three_layer_mixed_chain_matches_oracle(frac):
    g = build_training_graph(GraphSpec("chain", 3, ("heavy", "cheap", "medium")))
    base = attach(g, mixed_eight_profile(g))
    cg = base.with_budget(budget_at(base, frac))
    res = solve_exact(build_milp(cg))
    orc = brute_force(cg)
    assert res.objective == orc.optimal_energy


def test_deterministic():
    cg = make_instance("skip-chain", 3, "conv", 2).base
    cg = cg.with_budget(budget_at(cg, 1.0), float(cg.naive_runtime()) * 1.2)
    a, b = solve_exact(build_milp(cg)), solve_exact(build_milp(cg))
    assert a.status is Status.OPTIMAL
    assert a.assignment.values == b.assignment.values


def test_node_limit_without_incumbent_times_out():
    cg = make_instance("chain", 4, "mixed", 0).base
    cg = cg.with_budget(budget_at(cg, 0.8))
    res = solve_exact(build_milp(cg), SolveLimits(node_limit=1))
    assert res.status in (Status.TIMED_OUT, Status.FEASIBLE)
    with pytest.raises(ValueError):
        SolveLimits(time_limit=0)
    with pytest.raises(ValueError):
        SolveLimits(required_gap=1.0)


def test_malformed_instance_is_a_model_error():
    cg = make_instance("chain", 1, "mixed", 0).base
    inst = build_milp(cg)
    broken = type(inst)(inst.variables[:-1], inst.constraints, inst.objective, inst.n)
    with pytest.raises((ModelError, IndexError)):
        solve_exact(broken)


# -- LP bridge -------------------------------------------------------------

def _one_constraint_instance():
    cg = make_instance("chain", 1, "uniform", 0).base
    return build_milp(cg)


def test_lp_text_shape():
    text = write_lp(_one_constraint_instance())
    assert "Minimize" in text and "Subject To" in text and "Binary" in text and text.rstrip().endswith("End")
    lines = text.splitlines()
    assert any(line.split(":")[-1].split() == ["1.0", "R_1_1", "=", "1.0"] for line in lines)
    binaries = " ".join(lines[lines.index("Binary") + 1:])
    assert "R_1_1" in binaries.split()
    assert "U_1_1" not in binaries.split()


@pytest.mark.parametrize("mode", [None, "remat-only", "paging-only"])
def test_lp_round_trip_preserves_everything(mode):
    cg = make_instance("skip-chain", 3, "mixed", 1).base
    cg = cg.with_budget(budget_at(cg, 0.9), 1.0)
    inst = build_milp(cg)
    if mode:
        inst = restrict(inst, mode)
    back = parse_lp(write_lp(inst))
    assert back.variables == inst.variables
    assert back.constraints == inst.constraints
    assert dict(back.objective) == dict(inst.objective)
    assert back.tag_counts() == inst.tag_counts()
    assert (back.n, back.byte_scale, back.mem_offset) == (inst.n, inst.byte_scale, inst.mem_offset)


def test_lp_parse_errors():
    text = write_lp(_one_constraint_instance())
    with pytest.raises(LpFormatError):
        parse_lp(text.replace("__diag:", ":"))
    with pytest.raises(LpFormatError):
        parse_lp(text.replace("Binary\n", "Binary\n Z_9 \n"))


def test_solution_round_trip_and_diagonal_text():
    cg = make_instance("chain", 2, "mixed", 0).base
    inst = build_milp(cg)
    res = solve_exact(inst)
    again = parse_solution(format_solution(res.assignment, inst), inst)
    assert again.values == res.assignment.values
    # a solution naming only the diagonal plus the storage it needs
    s = diagonal_schedule(cg)
    lines = [f"{m}_{t + 1}_{i + 1} 1" for m in ("R", "SRAM") for t in range(5) for i in range(5)
             if getattr(s, m)[t, i]]
    a = parse_solution("\n".join(lines), inst)
    assert a.objective_value == cg.energy_floor()


def test_solution_rejections():
    inst = build_milp(make_instance("chain", 1, "mixed", 0).base)
    with pytest.raises(SolutionError, match="within"):
        parse_solution("R_1_1 0.5\n", inst)
    with pytest.raises(SolutionError, match="unknown"):
        parse_solution("R_9_9 1\n", inst)
    with pytest.raises(SolutionError, match="violates"):
        parse_solution("R_1_1 1\n", inst)  # R_2_2, R_3_3 missing
    ok = "\n".join(f"R_{v}_{v} 1.0000001" for v in (1, 2, 3)) + "\nSRAM_2_1 1\nSRAM_3_1 0.0000004\nSRAM_3_2 1\n"
    with pytest.raises(SolutionError):
        parse_solution(ok, inst)  # b1 needs f1 kept through step 3
    ok = ok.replace("SRAM_3_1 0.0000004", "SRAM_3_1 0.9999996")
    assert parse_solution(ok, inst).objective_value == build_milp(make_instance("chain", 1, "mixed", 0).base) \
        .objective_value(parse_solution(ok, inst).values)


@pytest.mark.parametrize("spec", [("chain", 3, "mixed", 0), ("skip-chain", 3, "conv", 1), ("attention-block", 4, "uniform", 2)])
def test_external_matches_builtin(spec):
    base = make_instance(*spec).base
    for frac in (0.85, 1.0):
        cg = base.with_budget(budget_at(base, frac))
        inst = build_milp(cg)
        a, b = solve_exact(inst), solve_external(inst)
        assert a.status == b.status
        if a.objective is not None:
            assert abs(float(a.objective - b.objective)) <= 1e-6 * float(a.objective)
            checked(b, inst, cg)


def test_external_respects_thread_setting(monkeypatch):
    monkeypatch.setenv("REMATPAGE_THREADS", "1")
    cg = make_instance("chain", 2, "mixed", 0).base
    assert solve_external(build_milp(cg)).objective == cg.energy_floor()
