from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import budget_at, checked, random_schedule
from rematpage.bench import make_instance
from rematpage.costmodel import attach, profile_from_dict
from rematpage.graph import GraphSpec, build_training_graph
from rematpage.milp import build_milp
from rematpage.schedule import (
    Schedule,
    ScheduleError,
    complete_storage,
    decode_binary,
    diagonal_schedule,
    encode_binary,
    evaluate,
    from_assignment,
    load_schedule,
    memory_profile,
    save_schedule,
    verify,
)
from rematpage.solver import solve_exact


def unit_costed(depth, mem=1, **budget):
    g = build_training_graph(GraphSpec("chain", depth))
    n = g.n
    p = profile_from_dict({"phi_compute": [1] * n, "phi_pagein": [2] * n, "phi_pageout": [3] * n,
                           "psi_compute": [1] * n, "psi_pagein": [1] * n, "psi_pageout": [1] * n,
                           "mem_out": [mem] * n})
    return attach(g, p, **budget)


def test_diagonal_at_full_memory_verifies():
    cg = unit_costed(2)
    s = diagonal_schedule(cg)
    assert verify(s, cg).ok
    m = evaluate(s, cg)
    assert (m.energy, m.compute_time, m.remat_count) == (5, 5, 0)
    assert m.pagein_count == m.pageout_count == 0


def test_page_pair_adds_both_energies():
    cg = unit_costed(4)
    base = evaluate(diagonal_schedule(cg), cg).energy
    MIN = np.zeros((9, 9), dtype=bool)
    MOUT = np.zeros((9, 9), dtype=bool)
    MOUT[1, 0] = MIN[5, 0] = True
    s = complete_storage(cg, np.eye(9, dtype=bool), MIN, MOUT)
    assert verify(s, cg).ok
    assert evaluate(s, cg).energy == base + 2 + 3


def test_pagein_without_flash_copy_is_flagged():
    cg = unit_costed(2)
    s = diagonal_schedule(cg)
    s.MIN[3, 0] = True
    rep = verify(s, cg)
    assert "1e" in rep.tags()
    assert any(v.tag == "1e" and (v.t, v.i) == (4, 1) for v in rep.violations)


def test_flipped_retention_breaks_memory_at_the_tight_step():
    base = make_instance("chain", 3, "mixed", 0).base
    cg = base.with_budget(budget_at(base, 1.0))
    diag = diagonal_schedule(cg)
    prof = memory_profile(diag, cg)
    hits = 0
    for t in sorted(range(1, cg.n), key=lambda r: -max(prof[r])):
        for i in range(t):
            if diag.SRAM[t, i] or not (diag.SRAM[t - 1, i] or diag.R[t - 1, i]):
                continue
            s = diag.copy()
            s.SRAM[t, i] = True  # keep one more tensor one step longer
            rep = verify(s, cg)
            if rep.ok:
                continue
            assert rep.tags() == {"mem"}
            assert {v.t for v in rep.violations} == {t + 1}
            hits += 1
    assert hits > 0


@pytest.mark.parametrize("mutate, tag", [
    (lambda s: s.R.__setitem__((2, 2), False), "diag"),
    (lambda s: s.SRAM.__setitem__((0, 1), True), "init"),
    (lambda s: s.SRAM.__setitem__((3, 0), False), "dep"),
    (lambda s: s.MOUT.__setitem__((2, 4), True), "1f"),
    (lambda s: s.SAUX.__setitem__((3, 2), True), "1d"),
])
def test_corruptions_are_reported(mutate, tag):
    cg = unit_costed(2)
    s = diagonal_schedule(cg)
    mutate(s)
    assert tag in verify(s, cg).tags()


def test_deadline_violation():
    cg = unit_costed(2, mu_deadline=5.5)
    s = diagonal_schedule(cg)
    assert verify(s, cg).ok
    s = complete_storage(cg, s.R | np.eye(5, k=-1, dtype=bool))
    assert "deadline" in verify(s, cg).tags()


def test_from_assignment_full_memory():
    cg = make_instance("chain", 2, "mixed", 0).base
    inst = build_milp(cg)
    res = solve_exact(inst)
    s = checked(res, inst, cg)
    assert np.array_equal(s.R, np.eye(5, dtype=bool))
    assert not (s.MIN.any() or s.MOUT.any() or s.SAUX.any())
    # retention exactly where dependency spans need it
    assert s == diagonal_schedule(cg)


def test_from_assignment_rejects_broken_diagonal():
    cg = make_instance("chain", 1, "mixed", 0).base
    inst = build_milp(cg)
    res = solve_exact(inst)
    values = list(res.assignment.values)
    values[inst.var("R", 2, 2)] = 0
    with pytest.raises(ScheduleError, match="diagonal"):
        from_assignment(type(res.assignment)(tuple(values), Fraction(0)), inst)


def test_shape_checks():
    with pytest.raises(ScheduleError):
        Schedule(np.eye(3), np.eye(3), np.eye(3), np.eye(3), np.eye(4))
    with pytest.raises(ScheduleError):
        Schedule(*(np.zeros((2, 3)) for _ in range(5)))
    rep = verify(Schedule.empty(3), unit_costed(2))
    assert rep.tags() == {"shape"}


def test_complete_storage_rejects_impossible_use():
    cg = unit_costed(1)
    R = np.eye(3, dtype=bool)
    R[0, 2] = True  # b1 at step 1, before its inputs exist
    with pytest.raises(ScheduleError):
        complete_storage(cg, R)


def test_file_round_trip(tmp_path):
    cg = make_instance("chain", 2, "mixed", 0).base.with_budget(1e6, 2.5)
    s = diagonal_schedule(cg)
    save_schedule(s, tmp_path / "s.json", cg=cg, objective=Fraction(7, 3), name="x")
    back, meta = load_schedule(tmp_path / "s.json")
    assert back == s
    assert meta["objective"] == Fraction(7, 3)
    assert meta["budget"] == {"mu_ram": 1e6, "mu_deadline": 2.5}
    assert meta["graph"] == cg.graph.digest() and meta["name"] == "x"


@given(st.data(), st.sampled_from([("chain", 2), ("chain", 3), ("skip-chain", 3)]))
def test_random_schedules_round_trip_and_price(data, shape):
    cg = make_instance(*shape, "mixed", 0).base
    s = random_schedule(data, cg)
    assert decode_binary(encode_binary(s)) == s
    assert load_schedule(save_schedule(s))[0] == s
    m = evaluate(s, cg)
    direct = sum(Fraction(float(cg.phi_compute[i])) * int(s.R[:, i].sum())
                 + Fraction(float(cg.phi_pagein[i])) * int(s.MIN[:, i].sum())
                 + Fraction(float(cg.phi_pageout[i])) * int(s.MOUT[:, i].sum()) for i in range(cg.n))
    assert m.energy == direct
    # at a budget equal to its own peak the schedule is still accepted
    assert verify(s, cg.with_budget(int(m.peak_ram))).ok
    if m.peak_ram > cg.memory_floor():
        assert "mem" in verify(s, cg.with_budget(int(m.peak_ram) - 1)).tags()


def test_binary_encoding_rejects_garbage():
    with pytest.raises(ScheduleError):
        decode_binary(b"nope")
