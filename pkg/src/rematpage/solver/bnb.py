"""Exact depth-first branch and bound for 0-1 programs.

Continuous variables must be pinned down by equality rows (each one defined
in terms of binaries and already-defined continuous variables); they are
substituted away, leaving a pure 0-1 program with integer rows
``sum(a * x) <= b``. Search uses bound propagation on every row, a lower
bound from the objective terms already fixed, and a memo keyed on the
partial row activities at timestep boundaries: two prefixes that leave every
straddling row with the same activity have the same set of completions, so
the costlier one is cut.

Before branching, each block is solved on its own together with the block
before it, keeping only the rows that live entirely inside the pair. That
relaxation either proves the whole program infeasible or gives a lower bound
on the block's cost, and the bounds of the blocks still ahead are added to
the running cost at every block boundary.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from ..milp import MilpInstance

__all__ = [
    "Assignment",
    "SolveLimits",
    "SolveResult",
    "Status",
    "ModelError",
    "solve_exact",
    "complete_assignment",
]

# kind -> (block offset, rank within block, value tried first)
_KIND_ORDER = {
    "R": (0, 0, 0),
    "MOUT": (0, 1, 0),
    "MIN": (0, 2, 0),
    "SRAM": (-1, 3, 1),
    "SAUX": (-1, 4, 1),
    "FREE": (0, 5, 1),
}


class ModelError(ValueError):
    pass


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class SolveLimits:
    time_limit: float = 600.0
    node_limit: int = 50_000_000
    required_gap: float = 0.0

    def __post_init__(self):
        if not (self.time_limit > 0 and self.node_limit > 0):
            raise ValueError("limits must be positive")
        if not 0 <= self.required_gap < 1:
            raise ValueError("required_gap must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Assignment:
    values: tuple
    objective_value: Fraction

    def by_name(self, inst: MilpInstance) -> dict[str, object]:
        return {v.name: x for v, x in zip(inst.variables, self.values)}


@dataclass
class SolveResult:
    status: Status
    assignment: Assignment | None = None
    gap: float | None = None
    nodes: int = 0
    seconds: float = 0.0
    bound: Fraction | None = None
    stats: dict = field(default_factory=dict)

    @property
    def objective(self) -> Fraction | None:
        return None if self.assignment is None else self.assignment.objective_value


def _lcm_den(values) -> int:
    out = 1
    for v in values:
        out = out * v.denominator // math.gcd(out, v.denominator)
    return out


def _eliminate(inst: MilpInstance):
    """Express continuous variables as affine forms over binaries."""
    variables = inst.variables
    defs: dict[int, tuple[Fraction, dict[int, Fraction]]] = {}
    defining: set[int] = set()
    pending = [
        j for j, c in enumerate(inst.constraints)
        if c.sense == "=" and any(not variables[v].binary for v, _ in c.coeffs)
    ]
    progress = True
    while pending and progress:
        progress = False
        rest = []
        for j in pending:
            c = inst.constraints[j]
            unknown = [v for v, _ in c.coeffs if not variables[v].binary and v not in defs]
            if len(unknown) != 1:
                rest.append(j)
                continue
            x = unknown[0]
            a = dict(c.coeffs)[x]
            const = c.rhs / a
            lin: dict[int, Fraction] = {}
            for v, coef in c.coeffs:
                if v == x:
                    continue
                if variables[v].binary:
                    lin[v] = lin.get(v, 0) - coef / a
                else:
                    k0, l0 = defs[v]
                    const -= coef * k0 / a
                    for w, cw in l0.items():
                        lin[w] = lin.get(w, 0) - coef * cw / a
            defs[x] = (const, {w: cw for w, cw in lin.items() if cw != 0})
            defining.add(j)
            progress = True
        pending = rest
    undefined = [variables[j].name for j, v in enumerate(variables) if not v.binary and j not in defs]
    if undefined:
        raise ModelError(f"continuous variables without a defining equality: {undefined[:5]}")
    return defs, defining


def _to_rows(inst: MilpInstance, defs, defining):
    """Integer rows ``sum(a*x) <= b`` over binaries (equalities give two rows)."""
    rows = []

    def expand(coeffs, rhs):
        lin: dict[int, Fraction] = {}
        const = Fraction(0)
        for v, c in coeffs:
            if v in defs:
                k0, l0 = defs[v]
                const += c * k0
                for w, cw in l0.items():
                    lin[w] = lin.get(w, 0) + c * cw
            else:
                lin[v] = lin.get(v, 0) + c
        return {w: c for w, c in lin.items() if c != 0}, rhs - const

    def emit(lin, rhs, tag):
        if not lin:
            if rhs < 0:
                raise _Infeasible(tag)
            return
        L = _lcm_den(list(lin.values()) + [rhs])
        items = sorted(((w, int(c * L)) for w, c in lin.items()), key=lambda e: -abs(e[1]))
        rows.append((items, math.floor(rhs * L), tag))

    for j, c in enumerate(inst.constraints):
        if j in defining:
            continue
        lin, rhs = expand(c.coeffs, c.rhs)
        if c.sense in ("<=", "="):
            emit(lin, rhs, c.tag)
        if c.sense in (">=", "="):
            emit({w: -a for w, a in lin.items()}, -rhs, c.tag)
    for v in defs:
        lin, rhs = expand(((v, Fraction(1)),), Fraction(0))
        emit({w: -a for w, a in lin.items()}, -rhs, "bound")
    return rows


class _Infeasible(Exception):
    pass


class _Abort(Exception):
    pass


def complete_assignment(inst: MilpInstance, binaries: dict[int, int], defs=None) -> Assignment:
    """Fill continuous variables from their definitions and price the result."""
    if defs is None:
        defs, _ = _eliminate(inst)
    values: list = [0] * len(inst.variables)
    for j, x in binaries.items():
        values[j] = x
    for j, (k0, lin) in defs.items():
        values[j] = k0 + sum((c * values[w] for w, c in lin.items()), Fraction(0))
    return Assignment(tuple(values), inst.objective_value(values))


class _Search:
    def __init__(self, inst: MilpInstance, limits: SolveLimits):
        self.inst = inst
        self.limits = limits
        self.defs, defining = _eliminate(inst)
        self.defining = defining
        variables = inst.variables
        nv = len(variables)
        self.binary = [j for j, v in enumerate(variables) if v.binary]
        rows = _to_rows(inst, self.defs, defining)

        self.row_items = [r[0] for r in rows]
        self.rhs = [r[1] for r in rows]
        self.rowmax = [abs(r[0][0][1]) for r in rows]
        self.var_rows: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
        for r, items in enumerate(self.row_items):
            for v, a in items:
                self.var_rows[v].append((r, a))
        self.minact = [sum(a for _, a in items if a < 0) for items in self.row_items]

        obj = dict(inst.objective)
        L = _lcm_den(list(obj.values()) or [Fraction(1)])
        self.obj_scale = L
        self.cost = [0] * nv
        for v, c in obj.items():
            if not variables[v].binary:
                raise ModelError("objective terms on continuous variables are not supported")
            self.cost[v] = int(c * L)
        self.lb = sum(c for c in self.cost if c < 0)

        self.val = [-1] * nv
        self.trail: list[int] = []
        self.undo_minact: list[list[tuple[int, int]]] = []
        self.queue: list[int] = []
        self.inq = [False] * len(rows)

        self._build_order()
        self.incumbent = None
        self.inc_cost = math.inf
        self.memo: dict[tuple, int] = {}
        nb = len(self.blocks)
        self.block_of = [-1] * nv
        for b, blk in enumerate(self.blocks):
            for j in blk:
                self.block_of[j] = b
        self.fixed_cost = [0] * nb
        self.step_lb = [0] * nb
        self.nodes = 0
        self.memo_hits = 0
        self.start = time.monotonic()

    def _build_order(self):
        variables = self.inst.variables
        keyed = []
        for j in self.binary:
            v = variables[j]
            off, rank, first = _KIND_ORDER.get(v.kind, (0, 9, 0))
            keyed.append(((v.t + off, rank, v.i, v.k, j), j, first))
        keyed.sort()
        self.first = {j: first for _, j, first in keyed}
        blocks: dict[int, list[int]] = {}
        for key, j, _ in keyed:
            blocks.setdefault(key[0], []).append(j)
        self.blocks = [blocks[b] for b in sorted(blocks)]

        # rows straddling each block boundary, with their already-decided terms
        seen_block = {}
        for b, blk in enumerate(self.blocks):
            for j in blk:
                seen_block[j] = b
        self.boundary_rows = []
        for b in range(len(self.blocks)):
            active = []
            for r, items in enumerate(self.row_items):
                past = [(v, a) for v, a in items if seen_block.get(v, -1) <= b]
                if past and len(past) < len(items):
                    active.append(past)
            self.boundary_rows.append(active)
        self.block_cost = [[(j, self.cost[j]) for j in blk if self.cost[j]] for blk in self.blocks]

    # -- trail ---------------------------------------------------------
    def assign(self, v: int, x: int) -> None:
        self.val[v] = x
        self.trail.append(v)
        changed = []
        minact, queue, inq = self.minact, self.queue, self.inq
        for r, a in self.var_rows[v]:
            if a > 0 and x == 1:
                minact[r] += a
            elif a < 0 and x == 0:
                minact[r] -= a
            else:
                continue
            changed.append((r, a))
            if not inq[r]:
                inq[r] = True
                queue.append(r)
        self.undo_minact.append(changed)
        c = self.cost[v]
        if c > 0 and x == 1:
            self.lb += c
            self.fixed_cost[self.block_of[v]] += c
        elif c < 0 and x == 0:
            self.lb -= c

    def undo(self, mark: int) -> None:
        val, minact = self.val, self.minact
        while len(self.trail) > mark:
            v = self.trail.pop()
            x = val[v]
            for r, a in self.undo_minact.pop():
                minact[r] -= a if a > 0 else -a
            c = self.cost[v]
            if c > 0 and x == 1:
                self.lb -= c
                self.fixed_cost[self.block_of[v]] -= c
            elif c < 0 and x == 0:
                self.lb += c
            val[v] = -1
        for r in self.queue:
            self.inq[r] = False
        self.queue.clear()

    def propagate(self) -> bool:
        queue, inq, minact, rhs, val = self.queue, self.inq, self.minact, self.rhs, self.val
        while queue:
            r = queue.pop()
            inq[r] = False
            slack = rhs[r] - minact[r]
            if slack < 0:
                for q in queue:
                    inq[q] = False
                queue.clear()
                return False
            if slack >= self.rowmax[r]:
                continue
            for v, a in self.row_items[r]:
                if (a if a > 0 else -a) <= slack:
                    break
                if val[v] < 0:
                    self.assign(v, 0 if a > 0 else 1)
        return True

    # -- search --------------------------------------------------------
    def _cutoff(self) -> float:
        if self.inc_cost is math.inf:
            return math.inf
        gap = self.limits.required_gap
        return self.inc_cost * (1 - gap) if gap > 0 else self.inc_cost

    def _check_limits(self):
        self.nodes += 1
        if self.nodes >= self.limits.node_limit:
            raise _Abort
        if self.nodes % 512 == 0 and time.monotonic() - self.start > self.limits.time_limit:
            raise _Abort

    def run(self) -> SolveResult:
        aborted = False
        root_lb = None
        try:
            for r in range(len(self.rhs)):
                self.inq[r] = True
                self.queue.append(r)
            if self.propagate():
                self._bound_blocks()
                root_lb = self.lb + self._future(0)
                self._block(0, 0, 0)
        except _Abort:
            aborted = True
        except _Infeasible:
            pass
        seconds = time.monotonic() - self.start
        stats = {"memo_hits": self.memo_hits, "memo_size": len(self.memo)}
        bound = None if root_lb is None else Fraction(root_lb, self.obj_scale)
        if self.incumbent is None:
            status = Status.TIMED_OUT if aborted else Status.INFEASIBLE
            return SolveResult(status, None, None, self.nodes, seconds, bound, stats)
        assignment = complete_assignment(self.inst, self._tidy(self.incumbent), self.defs)
        bad = self.inst.violations(assignment.values)
        if bad:
            raise AssertionError(f"search produced an assignment violating rows {bad[:5]}")
        obj = assignment.objective_value
        if aborted:
            gap = float((obj - bound) / obj) if obj > 0 else 0.0
            return SolveResult(Status.TIMED_OUT, assignment, gap, self.nodes, seconds, bound, stats)
        if self.limits.required_gap > 0:
            return SolveResult(Status.FEASIBLE, assignment, self.limits.required_gap, self.nodes, seconds, bound, stats)
        return SolveResult(Status.OPTIMAL, assignment, 0.0, self.nodes, seconds, obj, stats)

    # -- per-block relaxations -------------------------------------------
    def _future(self, b: int) -> int:
        """Cost still owed by blocks ``b..`` beyond what is already fixed."""
        fixed, lbs = self.fixed_cost, self.step_lb
        return sum(lbs[k] - fixed[k] for k in range(b, len(lbs)) if lbs[k] > fixed[k])

    def _bound_blocks(self, feasibility_nodes: int = 100_000, bound_nodes: int = 4_000) -> None:
        if any(c < 0 for c in self.cost):
            return  # the bounds below assume non-negative costs
        for b in range(len(self.blocks)):
            # a zero-cost pass stops at the first solution, so it is cheap
            # unless the block is infeasible, which is what it is there to prove
            if self._relax_block(b, feasibility_nodes, priced=False) is None:
                raise _Infeasible(f"block {b}")
            self.step_lb[b] = self._relax_block(b, bound_nodes) or 0

    def _relax_block(self, b: int, node_limit: int, priced: bool = True) -> int | None:
        """Minimum cost of block ``b`` over rows inside blocks ``b-1`` and ``b``.

        Returns None if that relaxation is infeasible and 0 if it could not
        be settled within ``node_limit`` nodes.
        """
        own = self.blocks[b]
        own_set = set(own)
        inside = own_set | (set(self.blocks[b - 1]) if b > 0 else set())
        nv = len(self.val)
        sub = object.__new__(_Search)
        sub.inst = self.inst
        sub.limits = SolveLimits(time_limit=self.limits.time_limit, node_limit=node_limit)
        sub.row_items, sub.rhs = [], []
        used: set[int] = set()
        for r, items in enumerate(self.row_items):
            kept, shift = [], 0
            for v, a in items:
                if v in inside:
                    kept.append((v, a))
                elif self.val[v] >= 0:
                    shift += a * self.val[v]
                else:
                    break
            else:
                # rows of the earlier block alone belong to that block's relaxation
                if any(v in own_set for v, _ in kept):
                    sub.row_items.append(kept)
                    sub.rhs.append(self.rhs[r] - shift)
                    used.update(v for v, _ in kept)
        scope = [v for blk in self.blocks[max(b - 1, 0):b + 1] for v in blk if v in used]
        sub.rowmax = [abs(items[0][1]) for items in sub.row_items]
        sub.var_rows = [[] for _ in range(nv)]
        for r, items in enumerate(sub.row_items):
            for v, a in items:
                sub.var_rows[v].append((r, a))
        sub.minact = [sum(a for _, a in items if a < 0) for items in sub.row_items]
        sub.cost = [self.cost[v] if priced and v in own_set else 0 for v in range(nv)]
        sub.lb = 0
        sub.val = [-1] * nv
        sub.trail, sub.undo_minact, sub.queue = [], [], []
        sub.inq = [False] * len(sub.row_items)
        sub.binary = scope
        sub.first = self.first
        sub.blocks = [scope]
        sub.boundary_rows = [[]]
        sub.block_cost = [[(j, sub.cost[j]) for j in scope if sub.cost[j]]]
        sub.block_of = [0] * nv
        sub.fixed_cost = [0]
        sub.step_lb = [0]
        sub.incumbent, sub.inc_cost = None, math.inf
        sub.memo, sub.nodes, sub.memo_hits = {}, 0, 0
        sub.start = self.start
        for v in scope:
            if self.val[v] >= 0:
                sub.assign(v, self.val[v])
        for r in range(len(sub.rhs)):
            sub.inq[r] = True
            sub.queue.append(r)
        if not sub.propagate():
            return None
        try:
            sub._block(0, 0, 0)
        except _Abort:
            return 0
        self.nodes += sub.nodes
        return None if sub.incumbent is None else sub.inc_cost

    def _tidy(self, binaries: dict[int, int]) -> dict[int, int]:
        """Clear zero-cost storage bits that no constraint needs.

        Search tries residency first, so an optimum may keep tensors around
        that nothing reads. Bits are cleared latest timestep first, keeping a
        change only if every row it touches (directly or through a defined
        continuous variable) still holds. The objective does not move.
        """
        inst = self.inst
        variables = inst.variables
        cand = [j for j in self.binary
                if variables[j].kind in ("SRAM", "SAUX") and binaries[j] == 1 and self.cost[j] == 0]
        if not cand:
            return binaries
        values = list(complete_assignment(inst, binaries, self.defs).values)
        feeds: dict[int, list[tuple[int, Fraction]]] = {}
        for u, (_, lin) in self.defs.items():
            for w, c in lin.items():
                feeds.setdefault(w, []).append((u, c))
        rows_of: dict[int, list[int]] = {}
        for r, con in enumerate(inst.constraints):
            if r not in self.defining:
                for v, _ in con.coeffs:
                    rows_of.setdefault(v, []).append(r)
        cand.sort(key=lambda j: (-variables[j].t, variables[j].kind, variables[j].i))
        for j in cand:
            fed = feeds.get(j, [])
            touched = set(rows_of.get(j, ()))
            for u, _ in fed:
                touched.update(rows_of.get(u, ()))
            values[j] = 0
            for u, c in fed:
                values[u] -= c
            if all(values[u] >= 0 for u, _ in fed) and all(inst.constraints[r].holds(values) for r in touched):
                continue
            values[j] = 1
            for u, c in fed:
                values[u] += c
        return {j: values[j] for j in self.binary}

    def _leaf(self) -> None:
        cost = sum(self.cost[j] for j in self.binary if self.val[j] == 1)
        if cost < self.inc_cost:
            self.inc_cost = cost
            self.incumbent = {j: self.val[j] for j in self.binary}

    def _block(self, b: int, j: int, prefix: int) -> None:
        blk = self.blocks[b]
        val = self.val
        while j < len(blk) and val[blk[j]] >= 0:
            j += 1
        if j == len(blk):
            prefix += sum(c for v, c in self.block_cost[b] if val[v] == 1)
            if b == len(self.blocks) - 1:
                self._leaf()
                return
            key = (b,) + tuple(sum(a for v, a in past if val[v] == 1) for past in self.boundary_rows[b])
            seen = self.memo.get(key)
            if seen is not None and seen <= prefix:
                self.memo_hits += 1
                return
            if self.lb + self._future(b + 1) >= self._cutoff():
                return
            self._block(b + 1, 0, prefix)
            if seen is None or prefix < seen:
                self.memo[key] = prefix
            return
        v = blk[j]
        first = self.first[v]
        for x in (first, 1 - first):
            self._check_limits()
            mark = len(self.trail)
            self.assign(v, x)
            if self.propagate() and self.lb < self._cutoff():
                self._block(b, j + 1, prefix)
            self.undo(mark)


def solve_exact(inst: MilpInstance, limits: SolveLimits | None = None) -> SolveResult:
    """Solve ``inst`` to proven optimality (or until ``limits`` run out).

    Every returned assignment is re-checked against all constraints with
    exact rational arithmetic.
    """
    limits = limits or SolveLimits()
    try:
        search = _Search(inst, limits)
    except _Infeasible:
        return SolveResult(Status.INFEASIBLE)
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 4 * len(search.binary) + 1000))
    try:
        return search.run()
    finally:
        sys.setrecursionlimit(old)
