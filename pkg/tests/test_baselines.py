import numpy as np
import pytest

from conftest import budget_at
from rematpage.baselines import (
    Unsupported,
    capuchin_greedy,
    chen_checkpoints,
    chen_sqrt,
    save_baseline,
    solve_restricted,
)
from rematpage.bench import full_memory_peak, make_instance
from rematpage.schedule import diagonal_schedule, load_schedule, verify
from test_planner import unit_chain


@pytest.mark.parametrize("depth,expected", [(1, [1]), (4, [2, 4]), (5, [3]), (9, [3, 6, 9]), (10, [4, 8])])
def test_chen_checkpoints(depth, expected):
    assert chen_checkpoints(depth) == expected


def test_chen_depth_one_is_diagonal():
    cg = unit_chain(1)
    r = chen_sqrt(cg)
    assert r.feasible
    assert np.array_equal(r.schedule.R, np.eye(cg.n, dtype=bool))


def test_chen_recomputes_each_dropped_layer_once():
    cg = unit_chain(4)
    r = chen_sqrt(cg)
    assert r.feasible and r.metrics.remat_count == 2
    assert r.metrics.pagein_count == 0


def test_chen_rejects_non_chains():
    with pytest.raises(Unsupported):
        chen_sqrt(make_instance("skip-chain", 3, "uniform").base)


@pytest.mark.parametrize("depth", [3, 4, 5])
@pytest.mark.parametrize("seed", [0, 1])
def test_chen_never_beats_remat_only(depth, seed):
    base = make_instance("chain", depth, "mixed", seed).base
    ch = chen_sqrt(base.with_budget(10**12))
    peak = int(ch.metrics.peak_ram)
    cg = base.with_budget(peak)
    ch = chen_sqrt(cg)
    opt = solve_restricted(cg, "remat-only", solver="lpfile")
    assert ch.feasible and opt.feasible
    assert ch.energy >= opt.energy


def test_capuchin_full_memory_is_diagonal(chain3):
    cg = chain3.with_budget(full_memory_peak(chain3))
    r = capuchin_greedy(cg)
    assert r.feasible
    assert np.array_equal(r.schedule.R, diagonal_schedule(cg).R)
    assert r.metrics.pagein_count == 0


def test_capuchin_pages_before_recomputing():
    cg = unit_chain(4).with_budget(5)
    r = capuchin_greedy(cg)
    assert r.feasible
    assert r.metrics.remat_count == 0 and r.metrics.pagein_count == 1
    assert verify(r.schedule, cg).ok


def test_capuchin_falls_back_to_recomputation():
    cg = unit_chain(3).with_budget(4)
    r = capuchin_greedy(cg)
    assert r.feasible and r.metrics.remat_count == 1


def test_capuchin_reports_unreachable_budgets():
    r = capuchin_greedy(unit_chain(3).with_budget(3))
    assert not r.feasible and r.status == "infeasible"


@pytest.mark.parametrize("frac", [0.8, 0.9, 1.0])
def test_capuchin_never_beats_optimum(chain3, frac):
    cg = chain3.with_budget(budget_at(chain3, frac))
    cap = capuchin_greedy(cg)
    opt = solve_restricted(cg, "integrated")
    if cap.feasible:
        assert opt.feasible and cap.energy >= opt.energy


def test_restricted_full_memory_is_diagonal(chain3):
    cg = chain3.with_budget(full_memory_peak(chain3))
    for mode in ("remat-only", "paging-only", "integrated"):
        r = solve_restricted(cg, mode)
        assert r.status == "optimal"
        assert r.energy == cg.energy_floor()


def test_paging_alone_can_be_infeasible_where_recomputation_works():
    cg = unit_chain(3).with_budget(4)
    assert solve_restricted(cg, "paging-only").status == "infeasible"
    assert solve_restricted(cg, "remat-only").energy == 8


def test_restricted_modes_are_dominated():
    cg = unit_chain(4).with_budget(5)
    e = {m: solve_restricted(cg, m).energy for m in ("integrated", "remat-only", "paging-only")}
    assert e["integrated"] <= min(e["remat-only"], e["paging-only"])
    assert e["paging-only"] == 11


def test_unknown_mode():
    with pytest.raises(ValueError):
        solve_restricted(unit_chain(1), "magic")


def test_save_baseline(tmp_path):
    cg = unit_chain(4).with_budget(5)
    r = capuchin_greedy(cg)
    save_baseline(r, cg, tmp_path / "c.json")
    s, meta = load_schedule(tmp_path / "c.json")
    assert np.array_equal(s.MIN, r.schedule.MIN)
    assert meta["name"] == "capuchin-greedy"
    assert save_baseline(capuchin_greedy(unit_chain(3).with_budget(3)), cg) is None
