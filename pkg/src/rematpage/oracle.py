"""Exhaustive search over whole schedule rows, for toy graphs only.

Works directly on the costed graph (not on MILP rows). At every timestep it
tries every compute row, every page-out subset of what is in RAM, every
page-in subset of what is on flash and every retention subset for the next
step. Two reductions keep it finite in practice, both exact:

* flash residency is carried maximally (``S_AUX[t+1] = S_AUX[t] | M_out[t]``):
  it costs nothing and only ever permits more page-ins;
* a (timestep, RAM set, flash set, compute time) state already expanded at
  no higher energy is not expanded again.

Partial energies prune against the best schedule found so far (all costs are
non-negative). Deadline and memory checks cut rows as soon as they fail;
memory use only grows with retention and paging, so the lightest variant of a
row is checked before its heavier ones are enumerated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .costmodel import CostedGraph
from .schedule import Schedule

__all__ = ["OracleResult", "OracleCapExceeded", "brute_force"]


class OracleCapExceeded(RuntimeError):
    pass


@dataclass
class OracleResult:
    optimal_energy: Fraction | None  # None: infeasible
    witness: Schedule | None
    explored: int

    @property
    def feasible(self) -> bool:
        return self.optimal_energy is not None


def _subsets(mask: int):
    """All submasks of ``mask``, largest first."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def _bits(mask: int):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


def brute_force(cg: CostedGraph, cap: int = 2_000_000) -> OracleResult:
    n = cg.n
    g = cg.graph
    F = lambda x: Fraction(float(x))  # noqa: E731
    phi_c = [F(x) for x in cg.phi_compute]
    phi_in = [F(x) for x in cg.phi_pagein]
    phi_out = [F(x) for x in cg.phi_pageout]
    psi = [F(x) for x in cg.psi_compute]
    mem = [int(m) for m in cg.mem_out]
    budget = Fraction(cg.mu_ram) if math.isfinite(cg.mu_ram) else None
    deadline = Fraction(cg.mu_deadline) if math.isfinite(cg.mu_deadline) else None
    dep_mask = [sum(1 << d for d in g.deps[k]) for k in range(n)]
    users = g.users
    # diagonal energy still owed from step t on
    owed = [sum(phi_c[t:], Fraction(0)) for t in range(n + 1)]

    def msum(mask, vec):
        return sum((vec[i] for i in _bits(mask)), type(vec[0])(0))

    def fits(ram, pin, row, pout, keep) -> bool:
        if budget is None:
            return True
        live = cg.mu_static + msum(ram, mem) + msum(pin, mem)
        if live > budget:
            return False
        for k in range(n):
            if not (row >> k) & 1:
                continue
            live += mem[k]
            if live > budget:
                return False
            for i in list(g.deps[k]) + [k]:
                if (keep >> i) & 1 or (pout >> i) & 1:
                    continue
                if any(j > k and (row >> j) & 1 for j in users[i]):
                    continue
                live -= mem[i]
        return True

    # computing op k needs its output and every input resident together
    if budget is not None and any(
        cg.mu_static + mem[k] + sum(mem[d] for d in g.deps[k]) > budget for k in range(n)
    ):
        return OracleResult(None, None, 0)

    best = [math.inf, None]
    explored = 0
    seen: dict[tuple, Fraction] = {}
    path: list[tuple[int, int, int, int, int]] = []
    others = [[m for m in _subsets(((1 << n) - 1) & ~(1 << t))] for t in range(n)]

    def step(t: int, ram: int, aux: int, energy: Fraction, used: Fraction):
        nonlocal explored
        if t == n:
            if energy < best[0]:
                best[0] = energy
                best[1] = list(path)
            return
        key = (t, ram, aux, used)
        prev = seen.get(key)
        if prev is not None and prev <= energy:
            return
        seen[key] = energy
        for extra in reversed(others[t]):  # fewest recomputations first
            row = extra | (1 << t)
            if any(dep_mask[k] & ~(row | ram) for k in _bits(row)):
                continue
            e_row = energy + msum(row, phi_c)
            if e_row - phi_c[t] + owed[t] >= best[0]:
                continue
            t_row = used + msum(row, psi)
            if deadline is not None and t_row > deadline:
                continue
            # retention and page traffic only add memory, so test the lightest variant first
            if not fits(ram, 0, row, 0, 0):
                continue
            for pout in reversed(list(_subsets(ram))):
                e_out = e_row + (msum(pout, phi_out) if pout else 0)
                if e_out - phi_c[t] + owed[t] >= best[0]:
                    continue
                for pin in reversed(list(_subsets(aux))):
                    e_in = e_out + (msum(pin, phi_in) if pin else 0)
                    if e_in - phi_c[t] + owed[t] >= best[0]:
                        continue
                    if not fits(ram, pin, row, pout, 0):
                        continue
                    avail = row | ram | pin
                    nxt_aux = aux | pout
                    for keep in (_subsets(avail) if t + 1 < n else (0,)):
                        explored += 1
                        if explored > cap:
                            raise OracleCapExceeded(f"explored more than {cap} candidate rows")
                        if not fits(ram, pin, row, pout, keep):
                            continue
                        path.append((row, pin, pout, keep, nxt_aux))
                        step(t + 1, keep, nxt_aux, e_in, t_row)
                        path.pop()

    step(0, 0, 0, Fraction(0), Fraction(0))
    if best[1] is None:
        return OracleResult(None, None, explored)

    s = Schedule.empty(n)
    for t, (row, pin, pout, keep, nxt_aux) in enumerate(best[1]):
        for i in range(n):
            s.R[t, i] = (row >> i) & 1
            s.MIN[t, i] = (pin >> i) & 1
            s.MOUT[t, i] = (pout >> i) & 1
            if t + 1 < n:
                s.SRAM[t + 1, i] = (keep >> i) & 1
                s.SAUX[t + 1, i] = (nxt_aux >> i) & 1
    return OracleResult(best[0], s, explored)

