"""The integrated rematerialization + paging program as a solver-neutral MILP.

Binary matrices are indexed ``[t, i]`` with 1-based timestep ``t`` and
1-based execution position ``i``. Memory is expressed in scaled units
``(bytes - mu_static) / byte_scale`` so coefficients stay small.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce

from .costmodel import CostedGraph

__all__ = [
    "Var",
    "Constraint",
    "MilpInstance",
    "build_milp",
    "restrict",
    "expected_counts",
    "TAGS",
    "MATRIX_KINDS",
]

MATRIX_KINDS = ("R", "SRAM", "SAUX", "MIN", "MOUT")
TAGS = ("dep", "1c", "1d", "1e", "1f", "mem", "deadline", "init", "diag", "free-def", "u-def")
MODES = ("remat-only", "paging-only")


@dataclass(frozen=True)
class Var:
    kind: str
    t: int
    i: int
    k: int = 0

    @property
    def binary(self) -> bool:
        return self.kind != "U"

    @property
    def name(self) -> str:
        if self.kind == "FREE":
            return f"FREE_{self.t}_{self.i}_{self.k}"
        return f"{self.kind}_{self.t}_{self.i}"

    @classmethod
    def parse(cls, name: str) -> "Var":
        kind, *nums = name.split("_")
        if kind not in MATRIX_KINDS + ("FREE", "U") or not all(x.isdigit() for x in nums):
            raise ValueError(f"not a schedule variable name: {name!r}")
        return cls(kind, *map(int, nums))


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple[tuple[int, Fraction], ...]
    sense: str  # "<=", ">=" or "="
    rhs: Fraction
    tag: str

    def holds(self, values) -> bool:
        lhs = sum((c * values[v] for v, c in self.coeffs), Fraction(0))
        if self.sense == "<=":
            return lhs <= self.rhs
        if self.sense == ">=":
            return lhs >= self.rhs
        return lhs == self.rhs


@dataclass(frozen=True, eq=False)
class MilpInstance:
    variables: tuple[Var, ...]
    constraints: tuple[Constraint, ...]
    objective: tuple[tuple[int, Fraction], ...]
    n: int
    byte_scale: Fraction = Fraction(1)
    mem_offset: int = 0
    meta: dict = field(default_factory=dict)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v.name: j for j, v in enumerate(self.variables)}

    def var(self, kind: str, t: int, i: int, k: int = 0) -> int:
        return self.index[Var(kind, t, i, k).name]

    def tag_counts(self) -> Counter:
        return Counter(c.tag for c in self.constraints)

    def objective_value(self, values) -> Fraction:
        return sum((c * values[v] for v, c in self.objective), Fraction(0))

    def violations(self, values) -> list[int]:
        """Indices of constraints (and bound breaches as -1-j) not met exactly."""
        bad = [j for j, c in enumerate(self.constraints) if not c.holds(values)]
        for j, v in enumerate(self.variables):
            x = values[j]
            if v.binary and x not in (0, 1):
                bad.append(-1 - j)
            elif not v.binary and x < 0:
                bad.append(-1 - j)
        return bad


def _byte_scale(cg: CostedGraph) -> Fraction:
    sizes = [int(m) for m in cg.mem_out]
    if math.isfinite(cg.mu_ram):
        room = Fraction(cg.mu_ram) - cg.mu_static
        if room.denominator == 1:
            sizes.append(int(room))
        else:
            return Fraction(1)
    g = reduce(math.gcd, sizes, 0)
    return Fraction(g if g > 0 else 1)


def build_milp(cg: CostedGraph) -> MilpInstance:
    n = cg.n
    deps = cg.graph.deps
    users = cg.graph.users
    scale = _byte_scale(cg)
    mem = [Fraction(int(m)) / scale for m in cg.mem_out]
    F = lambda x: Fraction(float(x))  # noqa: E731

    variables: list[Var] = []
    for kind in MATRIX_KINDS:
        variables += [Var(kind, t, i) for t in range(1, n + 1) for i in range(1, n + 1)]
    for t in range(1, n + 1):
        for k in range(1, n + 1):
            variables += [Var("FREE", t, i, k) for i in _freeable(deps, k)]
    variables += [Var("U", t, k) for t in range(1, n + 1) for k in range(1, n + 1)]
    index = {v.name: j for j, v in enumerate(variables)}
    X = lambda kind, t, i, k=0: index[Var(kind, t, i, k).name]  # noqa: E731

    one = Fraction(1)
    cons: list[Constraint] = []

    def add(terms, sense, rhs, tag):
        merged: dict[int, Fraction] = {}
        for v, c in terms:
            merged[v] = merged.get(v, 0) + c
        cons.append(Constraint(tuple((v, c) for v, c in merged.items() if c != 0), sense, Fraction(rhs), tag))

    edges = [(a + 1, b + 1) for a, b in cg.graph.pos_edges]
    for t in range(1, n + 1):
        for i, j in edges:
            add([(X("R", t, i), one), (X("SRAM", t, i), one), (X("R", t, j), -one)], ">=", 0, "dep")
    for t in range(2, n + 1):
        for i in range(1, n + 1):
            add(
                [(X("R", t - 1, i), one), (X("SRAM", t - 1, i), one), (X("MIN", t - 1, i), one), (X("SRAM", t, i), -one)],
                ">=", 0, "1c",
            )
    for t in range(2, n + 1):
        for i in range(1, n + 1):
            add([(X("SAUX", t - 1, i), one), (X("MOUT", t - 1, i), one), (X("SAUX", t, i), -one)], ">=", 0, "1d")
    for t in range(1, n + 1):
        for i in range(1, n + 1):
            add([(X("SAUX", t, i), one), (X("MIN", t, i), -one)], ">=", 0, "1e")
    for t in range(1, n + 1):
        for i in range(1, n + 1):
            add([(X("SRAM", t, i), one), (X("MOUT", t, i), -one)], ">=", 0, "1f")

    if math.isfinite(cg.mu_ram):
        cap = (Fraction(cg.mu_ram) - cg.mu_static) / scale
        for t in range(1, n + 1):
            for k in range(1, n + 1):
                add([(X("U", t, k), one)], "<=", cap, "mem")

    if math.isfinite(cg.mu_deadline):
        add(
            [(X("R", t, i), F(cg.psi_compute[i - 1])) for t in range(1, n + 1) for i in range(1, n + 1)],
            "<=", F(cg.mu_deadline), "deadline",
        )

    for i in range(1, n + 1):
        add([(X("SRAM", 1, i), one)], "=", 0, "init")
        add([(X("SAUX", 1, i), one)], "=", 0, "init")
    for v in range(1, n + 1):
        add([(X("R", v, v), one)], "=", 1, "diag")

    # FREE[t,i,k] => R[t,k] = 1 and nothing else still needs i this step
    hmax = 2 + max((len(u) for u in users), default=0)
    H = Fraction(hmax + 1)
    for t in range(1, n + 1):
        for k in range(1, n + 1):
            for i in _freeable(deps, k):
                fv = X("FREE", t, i, k)
                add([(fv, one), (X("R", t, k), -one)], "<=", 0, "free-def")
                hazards = [(X("MOUT", t, i), one)]
                if t < n:
                    hazards.append((X("SRAM", t + 1, i), one))
                hazards += [(X("R", t, j + 1), one) for j in users[i - 1] if j + 1 > k]
                add(hazards + [(fv, H)], "<=", H, "free-def")

    # U[t,k]: live memory while op k runs at step t, after earlier ops' frees
    for t in range(1, n + 1):
        base = [(X("SRAM", t, i), -mem[i - 1]) for i in range(1, n + 1)]
        base += [(X("MIN", t, i), -mem[i - 1]) for i in range(1, n + 1)]
        add([(X("U", t, 1), one)] + base + [(X("R", t, 1), -mem[0])], "=", 0, "u-def")
        for k in range(2, n + 1):
            freed = [(X("FREE", t, i, k - 1), mem[i - 1]) for i in _freeable(deps, k - 1)]
            add(
                [(X("U", t, k), one), (X("U", t, k - 1), -one), (X("R", t, k), -mem[k - 1])] + freed,
                "=", 0, "u-def",
            )

    objective = []
    for t in range(1, n + 1):
        for i in range(1, n + 1):
            objective.append((X("R", t, i), F(cg.phi_compute[i - 1])))
            objective.append((X("MIN", t, i), F(cg.phi_pagein[i - 1])))
            objective.append((X("MOUT", t, i), F(cg.phi_pageout[i - 1])))
    objective = [(v, c) for v, c in objective if c != 0]

    return MilpInstance(
        tuple(variables), tuple(cons), tuple(objective), n, scale, cg.mu_static,
        meta={"edges": len(edges), "mem_finite": math.isfinite(cg.mu_ram),
              "deadline_finite": math.isfinite(cg.mu_deadline), "mode": "integrated"},
    )


def _freeable(deps, k: int) -> list[int]:
    """1-based ids whose memory op ``k`` may release: its inputs and itself."""
    return [d + 1 for d in deps[k - 1]] + [k]


def expected_counts(n: int, edges: int, mem_finite=True, deadline_finite=True) -> dict[str, int]:
    """Closed-form constraint counts per tag."""
    free = n * (edges + n)
    return {
        "dep": n * edges,
        "1c": (n - 1) * n,
        "1d": (n - 1) * n,
        "1e": n * n,
        "1f": n * n,
        "mem": n * n if mem_finite else 0,
        "deadline": 1 if deadline_finite else 0,
        "init": 2 * n,
        "diag": n,
        "free-def": 2 * free,
        "u-def": n * n,
    }


def restrict(inst: MilpInstance, mode: str) -> MilpInstance:
    """Add the fixings of an ablation: no paging, or no recomputation."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    extra = []
    one = Fraction(1)
    for j, v in enumerate(inst.variables):
        if mode == "remat-only" and v.kind in ("MIN", "MOUT"):
            extra.append(Constraint(((j, one),), "=", Fraction(0), "mode"))
        elif mode == "paging-only" and v.kind == "R" and v.t != v.i:
            extra.append(Constraint(((j, one),), "=", Fraction(0), "mode"))
    meta = dict(inst.meta, mode=mode)
    return MilpInstance(
        inst.variables, inst.constraints + tuple(extra), inst.objective, inst.n,
        inst.byte_scale, inst.mem_offset, meta,
    )
