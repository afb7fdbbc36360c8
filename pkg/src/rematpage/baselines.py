"""Reference strategies to compare the integrated optimum against."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costmodel import CostedGraph
from .graph import chain_depth
from .milp import build_milp, restrict
from .schedule import (
    Metrics,
    Schedule,
    ScheduleError,
    complete_storage,
    diagonal_schedule,
    evaluate,
    from_assignment,
    memory_profile,
    save_schedule,
    verify,
)
from .solver import SolveLimits, solve_exact, solve_external

__all__ = [
    "BaselineResult",
    "Unsupported",
    "chen_sqrt",
    "chen_checkpoints",
    "capuchin_greedy",
    "solve_restricted",
    "save_baseline",
]


class Unsupported(ValueError):
    pass


@dataclass
class BaselineResult:
    name: str
    schedule: Schedule | None
    metrics: Metrics | None
    status: str = "feasible"
    note: str = ""

    @property
    def feasible(self) -> bool:
        return self.schedule is not None

    @property
    def energy(self):
        return None if self.metrics is None else self.metrics.energy


def _result(name: str, s: Schedule, cg: CostedGraph, note: str = "") -> BaselineResult:
    rep = verify(s, cg)
    if not rep.ok:
        return BaselineResult(name, None, None, "infeasible", f"{note}; {rep.violations[0]}".strip("; "))
    return BaselineResult(name, s, evaluate(s, cg), "feasible", note)


def chen_checkpoints(depth: int) -> list[int]:
    stride = math.ceil(math.sqrt(depth))
    return list(range(stride, depth + 1, stride))


def chen_sqrt(cg: CostedGraph) -> BaselineResult:
    """Keep every ceil(sqrt(d))-th forward activation and recompute the rest.

    Each run of dropped layers is recomputed once, at the step where the
    backward pass first needs one of them, from the checkpoint below it.
    """
    g = cg.graph
    d = chain_depth(g)
    if d is None:
        raise Unsupported("chen_sqrt needs a plain chain graph")
    pos = {lab: k for k, lab in enumerate(g.pos_labels)}
    fwd = [pos[f"f{i}"] for i in range(1, d + 1)]
    bwd = [pos[f"b{i}"] for i in range(1, d + 1)]
    keep = set(chen_checkpoints(d))
    R = np.eye(cg.n, dtype=bool)
    bounds = [0] + sorted(keep)
    if bounds[-1] != d:
        bounds.append(d)
    for lo, hi in zip(bounds, bounds[1:]):
        dropped = [i for i in range(lo + 1, hi + 1) if i not in keep]
        if not dropped:
            continue
        # backward runs top-down, so the highest dropped layer m is needed
        # first: as the input of b_{m+1}, or by b_m itself at the top
        m = max(dropped)
        step = bwd[m] if m < d else bwd[m - 1]
        for i in dropped:
            R[step, fwd[i - 1]] = True
    s = complete_storage(cg, R)
    return _result("chen-sqrt", s, cg, f"checkpoints {sorted(keep)}")


def _uses(s: Schedule, g, i: int) -> list[int]:
    """Steps at which tensor ``i`` is produced or read."""
    steps = set(np.flatnonzero(s.R[:, i]))
    for j in g.users[i]:
        steps |= set(np.flatnonzero(s.R[:, j]))
    return sorted(int(x) for x in steps)


def _excess(s: Schedule, cg: CostedGraph) -> int:
    return sum(max(u - cg.mu_ram, 0) for row in memory_profile(s, cg) for u in row)


def _rebuild(cg, R, MIN, MOUT) -> Schedule | None:
    try:
        return complete_storage(cg, R, MIN, MOUT)
    except ScheduleError:
        return None


def capuchin_greedy(cg: CostedGraph, max_moves: int = 10_000) -> BaselineResult:
    """Page first, recompute only when paging runs out.

    Candidates for paging are idle intervals of a tensor between two uses,
    long enough that a page-out after the first and a page-in just before the
    second leave at least one step without the tensor in RAM. They are taken
    in order of memory saved per second of transfer. Once no page move lowers
    the budget overflow, single recomputations are tried cheapest first.
    """
    g = cg.graph
    n = cg.n
    s = diagonal_schedule(cg)
    if not math.isfinite(cg.mu_ram) or _excess(s, cg) == 0:
        return _result("capuchin-greedy", s, cg)
    R, MIN, MOUT = s.R.copy(), s.MIN.copy(), s.MOUT.copy()
    mem = cg.mem_out
    msps = mem / np.maximum(cg.psi_pagein + cg.psi_pageout, 1e-30)
    page_order = sorted(range(n), key=lambda i: (-msps[i], i))
    remat_order = sorted(range(n), key=lambda i: (cg.phi_compute[i], i))
    over = _excess(s, cg)
    paged = remat = 0

    for _ in range(max_moves):
        if over == 0:
            break
        best = None
        for i in page_order:
            uses = _uses(s, g, i)
            for u1, u2 in zip(uses, uses[1:]):
                out_at = u1 if s.SRAM[u1, i] else u1 + 1
                if u2 - 1 - out_at < 2 or MOUT[out_at, i] or MIN[u2 - 1, i]:
                    continue
                mo, mi = MOUT.copy(), MIN.copy()
                mo[out_at, i] = mi[u2 - 1, i] = True
                cand = _rebuild(cg, R, mi, mo)
                if cand is not None and _excess(cand, cg) < over:
                    best = (cand, R, mi, mo)
                    break
            if best:
                paged += 1
                break
        if best is None:
            for i in remat_order:
                uses = _uses(s, g, i)
                for u1, u2 in zip(uses, uses[1:]):
                    if u2 - u1 < 2 or R[u2, i]:
                        continue
                    if any(not (s.SRAM[u2, d] or (R[u2, d] and d < i)) for d in g.deps[i]):
                        continue
                    r = R.copy()
                    r[u2, i] = True
                    cand = _rebuild(cg, r, MIN, MOUT)
                    if cand is not None and _excess(cand, cg) < over:
                        best = (cand, r, MIN, MOUT)
                        break
                if best:
                    remat += 1
                    break
        if best is None:
            return BaselineResult("capuchin-greedy", None, None, "infeasible", "budget unreachable")
        s, R, MIN, MOUT = best
        over = _excess(s, cg)
    return _result("capuchin-greedy", s, cg, f"{paged} page moves, {remat} recomputations")


_MODES = {"integrated": None, "remat-only": "remat-only", "paging-only": "paging-only",
          "remat": "remat-only", "paging": "paging-only"}


def solve_restricted(cg: CostedGraph, mode: str, solver: str = "builtin",
                     limits: SolveLimits | None = None) -> BaselineResult:
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    inst = build_milp(cg)
    if _MODES[mode]:
        inst = restrict(inst, _MODES[mode])
    run = solve_exact if solver == "builtin" else solve_external
    res = run(inst, limits)
    name = mode if _MODES[mode] is None else _MODES[mode]
    if res.assignment is None:
        return BaselineResult(name, None, None, res.status.value)
    s = from_assignment(res.assignment, inst)
    out = _result(name, s, cg)
    out.status = res.status.value
    if out.metrics is not None and out.metrics.energy != res.objective:  # pragma: no cover
        raise AssertionError("schedule energy disagrees with the solver objective")
    return out


def save_baseline(res: BaselineResult, cg: CostedGraph, path=None) -> str | None:
    if res.schedule is None:
        return None
    return save_schedule(res.schedule, path, cg=cg, objective=res.energy, name=res.name)

