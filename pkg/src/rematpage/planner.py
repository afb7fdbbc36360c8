"""Turn a schedule into a linear instruction stream and time it.

The plan walks the schedule step by step and, inside a step, node by node:
page-in, compute, page-out, then releases of whatever that op was the last
user of. Tensors still held at the end of a step that are not retained for
the next one (paged-out copies, stale retained copies) are released there.

Timing model used by :func:`simulate`: one compute unit runs the
instructions in program order; one bus carries transfers, one at a time,
and runs concurrently with compute. Issuing a transfer costs the compute unit
nothing unless ``sync_paging`` is set. RAM is counted per tensor copy in
program order, which reproduces :func:`schedule.memory_profile` exactly for
emitted plans.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .costmodel import CostedGraph
from .schedule import Schedule, _frees, verify

__all__ = [
    "Instr",
    "ExecutionPlan",
    "SimReport",
    "PlanError",
    "emit_plan",
    "simulate",
    "hide_latency",
    "format_plan",
    "parse_plan",
    "save_plan",
    "load_plan",
    "OPS",
]

OPS = ("PAGEIN", "COMPUTE", "PAGEOUT", "DEALLOC")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Instr:
    op: str
    node: int  # execution position, 0-based
    t: int  # issue timestep, 1-based
    start: float | None = None


@dataclass(frozen=True)
class ExecutionPlan:
    instructions: tuple[Instr, ...]
    # None: never passed through hide_latency; False: hiding was not possible
    latency_hidden: bool | None = None

    def __len__(self) -> int:
        return len(self.instructions)

    def count(self, op: str, node: int | None = None) -> int:
        return sum(1 for ins in self.instructions if ins.op == op and (node is None or ins.node == node))


@dataclass
class SimReport:
    ok: bool
    peak_ram: int
    wall_clock: float
    hidden_transfer: float
    first_violation: int | None
    violations: list[str] = field(default_factory=list)
    compute_time: float = 0.0
    transfer_time: float = 0.0
    starts: list[float] = field(default_factory=list)
    stalls: list[float] = field(default_factory=list)

    @property
    def unhidden_transfer(self) -> float:
        return self.transfer_time - self.hidden_transfer

    @property
    def use_after_free(self) -> bool:
        return any(v.startswith("use-after-free") for v in self.violations)


def emit_plan(s: Schedule, cg: CostedGraph) -> ExecutionPlan:
    rep = verify(s, cg)
    if not rep.ok:
        raise PlanError(f"schedule fails verification: {rep.violations[0]}")
    g = cg.graph
    n = s.n
    out: list[Instr] = []
    for t in range(n):
        copies = [int(s.SRAM[t, i]) for i in range(n)]
        for k in range(n):
            if s.MIN[t, k]:
                out.append(Instr("PAGEIN", k, t + 1))
                copies[k] += 1
            if s.R[t, k]:
                out.append(Instr("COMPUTE", k, t + 1))
                copies[k] += 1
            if s.MOUT[t, k]:
                out.append(Instr("PAGEOUT", k, t + 1))
            for i in _frees(s, g, t, k):
                out.append(Instr("DEALLOC", i, t + 1))
                copies[i] -= 1
        for i in range(n):
            keep = int(t + 1 < n and s.SRAM[t + 1, i])
            out += [Instr("DEALLOC", i, t + 1)] * max(copies[i] - keep, 0)
    return ExecutionPlan(tuple(out))


def simulate(p: ExecutionPlan, cg: CostedGraph, sync_paging: bool = False) -> SimReport:
    g = cg.graph
    n = cg.n
    mem = [int(m) for m in cg.mem_out]
    psi_c = [float(x) for x in cg.psi_compute]
    psi_in = [float(x) for x in cg.psi_pagein]
    psi_out = [float(x) for x in cg.psi_pageout]
    budget = cg.mu_ram

    ram: list[list[float]] = [[] for _ in range(n)]  # ready time of each RAM copy
    flash: list[float | None] = [None] * n  # ready time of the flash copy
    busy_until = [0.0] * n  # last transfer touching the tensor
    live = cg.mu_static
    peak = live
    cpu = 0.0
    bus = 0.0
    compute_total = 0.0
    transfer_total = 0.0
    violations: list[str] = []
    first = None
    starts: list[float] = []
    stalls: list[float] = []

    def fail(idx, msg):
        nonlocal first
        violations.append(msg)
        if first is None:
            first = idx

    for idx, ins in enumerate(p.instructions):
        k = ins.node
        stall = 0.0
        if ins.op == "COMPUTE":
            ready = cpu
            for d in g.deps[k]:
                if not ram[d]:
                    fail(idx, f"use-after-free: op {k + 1} reads {d + 1}, which is not in RAM")
                    continue
                ready = max(ready, min(ram[d]))
            stall = ready - cpu
            start = ready
            cpu = start + psi_c[k]
            compute_total += psi_c[k]
            ram[k].append(cpu)
            live += mem[k]
        elif ins.op == "PAGEIN":
            if flash[k] is None:
                fail(idx, f"page-in of {k + 1}, which is not on flash")
                flash_ready = cpu
            else:
                flash_ready = flash[k]
            start = max(cpu, bus, flash_ready)
            bus = start + psi_in[k]
            transfer_total += psi_in[k]
            busy_until[k] = bus
            ram[k].append(bus)
            live += mem[k]
            if sync_paging:
                stall = bus - cpu
                cpu = bus
        elif ins.op == "PAGEOUT":
            if not ram[k]:
                fail(idx, f"page-out of {k + 1}, which is not in RAM")
                src_ready = cpu
            else:
                src_ready = min(ram[k])
            start = max(cpu, bus, src_ready)
            bus = start + psi_out[k]
            transfer_total += psi_out[k]
            busy_until[k] = bus
            flash[k] = bus
            if sync_paging:
                stall = bus - cpu
                cpu = bus
        elif ins.op == "DEALLOC":
            start = cpu
            if not ram[k]:
                fail(idx, f"double free of {k + 1}")
            else:
                # drop the newest copy; the buffer returns once its transfers finish
                ram[k].pop()
                live -= mem[k]
        else:
            raise PlanError(f"unknown instruction {ins.op!r}")
        starts.append(start)
        stalls.append(stall)
        peak = max(peak, live)
        if live > budget:
            fail(idx, f"mem: {live} bytes live after instruction {idx} > budget {budget}")

    wall = max(cpu, bus)
    unhidden = max(wall - compute_total, 0.0)
    hidden = max(transfer_total - unhidden, 0.0)
    return SimReport(
        ok=not violations,
        peak_ram=int(peak),
        wall_clock=wall,
        hidden_transfer=hidden,
        first_violation=first,
        violations=violations,
        compute_time=compute_total,
        transfer_time=transfer_total,
        starts=starts,
        stalls=stalls,
    )


def _touches(ins: Instr, node: int) -> bool:
    return ins.node == node


def _stamp(p: ExecutionPlan, rep: SimReport, hidden: bool) -> ExecutionPlan:
    ins = tuple(replace(x, start=s) for x, s in zip(p.instructions, rep.starts))
    return ExecutionPlan(ins, latency_hidden=hidden)


def _page_in_stalls(p: ExecutionPlan, rep: SimReport) -> bool:
    """True if some compute waits on data still arriving over the bus."""
    return any(
        ins.op == "COMPUTE" and st > 1e-12 for ins, st in zip(p.instructions, rep.stalls)
    )


def hide_latency(p: ExecutionPlan, cg: CostedGraph, sync_paging: bool = False) -> ExecutionPlan:
    """Advance page-ins so their data is in RAM before the consumer starts.

    Each page-in may move to any earlier slot after the last instruction
    that touches the same tensor. Moves are tried one page-in at a time,
    keeping the latest slot that removes its stall, re-simulating (and so
    re-checking the RAM budget) after every move. If not every stall can be
    removed this way the input plan is returned unchanged, flagged
    ``latency_hidden=False``.
    """
    base = simulate(p, cg, sync_paging)
    if not base.ok:
        raise PlanError(f"plan does not simulate cleanly: {base.violations[0]}")
    if p.count("PAGEIN") == 0:
        return _stamp(p, base, True)
    if sync_paging:
        # transfers block compute regardless of where they are issued
        return replace(p, latency_hidden=False)

    cur = list(p.instructions)
    rep = base
    for target in [j for j, x in enumerate(cur) if x.op == "PAGEIN"]:
        # a move only shifts instructions before ``target``, so later indices stay valid
        pos = target
        node = cur[pos].node
        floor = pos
        while floor > 0 and not _touches(cur[floor - 1], node):
            floor -= 1
        if floor == pos:
            continue
        consumer = next(
            (j for j in range(pos + 1, len(cur)) if cur[j].op == "COMPUTE" and node in cg.graph.deps[cur[j].node]),
            None,
        )
        if consumer is None or rep.stalls[consumer] <= 1e-12:
            continue
        best = None
        for dest in range(pos - 1, floor - 1, -1):
            trial = cur[:pos] + cur[pos + 1:]
            moved = replace(cur[pos], t=trial[dest - 1].t if dest > 0 else 1)
            trial.insert(dest, moved)
            r = simulate(ExecutionPlan(tuple(trial)), cg)
            if not r.ok:
                break  # holding the buffer even longer cannot help the budget
            if r.wall_clock <= rep.wall_clock + 1e-12:
                best = (trial, r)
                if r.stalls[consumer] <= 1e-12:
                    break
        if best is not None:
            cur, rep = best
    hidden = not _page_in_stalls(ExecutionPlan(tuple(cur)), rep)
    if not hidden:
        return replace(p, latency_hidden=False)
    return _stamp(ExecutionPlan(tuple(cur)), rep, True)


# -- plan files ------------------------------------------------------------

def format_plan(p: ExecutionPlan, cg: CostedGraph) -> str:
    ids = cg.graph.order
    lines = []
    for ins in p.instructions:
        line = f"t {ins.t} {ins.op} {ids[ins.node]}"
        if ins.start is not None:
            line += f" start={ins.start!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_plan(text: str, cg: CostedGraph) -> ExecutionPlan:
    pos = cg.graph.position
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (4, 5) or parts[0] != "t" or parts[2] not in OPS:
            raise PlanError(f"line {lineno}: expected 't <idx> <OP> <node-id> [start=<s>]'")
        try:
            t, nid = int(parts[1]), int(parts[3])
            start = None
            if len(parts) == 5:
                key, _, val = parts[4].partition("=")
                if key != "start":
                    raise ValueError(parts[4])
                start = float(val)
        except ValueError as exc:
            raise PlanError(f"line {lineno}: {exc}") from None
        if nid not in pos:
            raise PlanError(f"line {lineno}: unknown node id {nid}")
        out.append(Instr(parts[2], pos[nid], t, start))
    return ExecutionPlan(tuple(out))


def save_plan(p: ExecutionPlan, cg: CostedGraph, path: str | Path) -> None:
    Path(path).write_text(format_plan(p, cg))


def load_plan(path: str | Path, cg: CostedGraph) -> ExecutionPlan:
    return parse_plan(Path(path).read_text(), cg)

