"""Decoded schedules: feasibility checking, metrics and file formats.

Everything here works straight from the five boolean matrices and the
costed graph; none of it goes through the MILP rows.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .costmodel import CostedGraph

__all__ = [
    "Schedule",
    "Metrics",
    "Violation",
    "VerifyReport",
    "ScheduleError",
    "from_assignment",
    "verify",
    "evaluate",
    "memory_profile",
    "diagonal_schedule",
    "complete_storage",
    "save_schedule",
    "load_schedule",
    "encode_binary",
    "decode_binary",
]

MATRICES = ("R", "SRAM", "SAUX", "MIN", "MOUT")


class ScheduleError(ValueError):
    pass


@dataclass(eq=False)
class Schedule:
    """Boolean ``T x T`` matrices indexed ``[timestep - 1, position]``."""

    R: np.ndarray
    SRAM: np.ndarray
    SAUX: np.ndarray
    MIN: np.ndarray
    MOUT: np.ndarray

    def __post_init__(self):
        for name in MATRICES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool))
        shapes = {getattr(self, m).shape for m in MATRICES}
        if len(shapes) != 1:
            raise ScheduleError(f"matrix shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ScheduleError(f"matrices must be square, got {shape}")

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return all(np.array_equal(getattr(self, m), getattr(other, m)) for m in MATRICES)

    def copy(self) -> "Schedule":
        return Schedule(*(getattr(self, m).copy() for m in MATRICES))

    @classmethod
    def empty(cls, n: int) -> "Schedule":
        return cls(*(np.zeros((n, n), dtype=bool) for _ in MATRICES))


@dataclass
class Metrics:
    energy: Fraction
    compute_time: Fraction
    peak_ram: int | Fraction
    pagein_count: int
    pageout_count: int
    remat_count: int


@dataclass(frozen=True)
class Violation:
    tag: str
    t: int
    i: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.tag} at (t={self.t}, i={self.i}){': ' + self.detail if self.detail else ''}"


@dataclass
class VerifyReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def tags(self) -> set[str]:
        return {v.tag for v in self.violations}


def from_assignment(a, inst) -> Schedule:
    """Read the five matrices out of a solved MILP assignment."""
    n = inst.n
    s = Schedule.empty(n)
    for var, x in zip(inst.variables, a.values):
        if var.kind in MATRICES:
            if not (1 <= var.t <= n and 1 <= var.i <= n):
                raise ScheduleError(f"variable {var.name} outside a {n}x{n} schedule")
            getattr(s, var.kind)[var.t - 1, var.i - 1] = bool(x)
    missing = [v for v in range(n) if not s.R[v, v]]
    if missing:
        raise ScheduleError(f"diagonal rule broken at positions {[v + 1 for v in missing]}")
    return s


def _frees(s: Schedule, g, t: int, k: int) -> list[int]:
    """Tensors released right after op ``k`` runs at step ``t`` (0-based)."""
    if not s.R[t, k]:
        return []
    n = s.n
    out = []
    for i in list(g.deps[k]) + [k]:
        if t + 1 < n and s.SRAM[t + 1, i]:
            continue
        if s.MOUT[t, i]:
            continue
        if any(j > k and s.R[t, j] for j in g.users[i]):
            continue
        out.append(i)
    return out


def memory_profile(s: Schedule, cg: CostedGraph) -> list[list[int]]:
    """``U[t][k]``: bytes live while op ``k`` would run at step ``t``.

    Start of step: static memory, retained tensors and page-in buffers. Each
    computed op adds its output; releases of earlier ops this step apply
    before the next op starts.
    """
    g = cg.graph
    n = s.n
    mem = [int(m) for m in cg.mem_out]
    rows = []
    for t in range(n):
        live = cg.mu_static
        live += sum(mem[i] for i in range(n) if s.SRAM[t, i])
        live += sum(mem[i] for i in range(n) if s.MIN[t, i])
        row = []
        for k in range(n):
            if s.R[t, k]:
                live += mem[k]
            row.append(live)
            for i in _frees(s, g, t, k):
                live -= mem[i]
        rows.append(row)
    return rows


def verify(s: Schedule, cg: CostedGraph) -> VerifyReport:
    rep = VerifyReport()
    bad = rep.violations.append
    n = cg.n
    if s.n != n:
        bad(Violation("shape", 0, 0, f"schedule is {s.n}x{s.n}, graph has {n} nodes"))
        return rep
    g = cg.graph

    for v in range(n):
        if not s.R[v, v]:
            bad(Violation("diag", v + 1, v + 1, "op not computed at its own timestep"))
    for i in range(n):
        if s.SRAM[0, i]:
            bad(Violation("init", 1, i + 1, "RAM residency at the first step"))
        if s.SAUX[0, i]:
            bad(Violation("init", 1, i + 1, "flash residency at the first step"))
    for t in range(n):
        for a, b in g.pos_edges:
            if s.R[t, b] and not (s.R[t, a] or s.SRAM[t, a]):
                bad(Violation("dep", t + 1, b + 1, f"input {a + 1} not resident"))
        for i in range(n):
            if t > 0 and s.SRAM[t, i] and not (s.R[t - 1, i] or s.SRAM[t - 1, i] or s.MIN[t - 1, i]):
                bad(Violation("1c", t + 1, i + 1, "resident without compute, retention or page-in"))
            if t > 0 and s.SAUX[t, i] and not (s.SAUX[t - 1, i] or s.MOUT[t - 1, i]):
                bad(Violation("1d", t + 1, i + 1, "on flash without an earlier page-out"))
            if s.MIN[t, i] and not s.SAUX[t, i]:
                bad(Violation("1e", t + 1, i + 1, "page-in of a tensor not on flash"))
            if s.MOUT[t, i] and not s.SRAM[t, i]:
                bad(Violation("1f", t + 1, i + 1, "page-out of a tensor not in RAM"))

    if math.isfinite(cg.mu_ram):
        budget = Fraction(cg.mu_ram)
        for t, row in enumerate(memory_profile(s, cg)):
            for k, u in enumerate(row):
                if u > budget:
                    bad(Violation("mem", t + 1, k + 1, f"{u} bytes > budget {cg.mu_ram}"))
    if math.isfinite(cg.mu_deadline):
        used = _compute_time(s, cg)
        if used > Fraction(cg.mu_deadline):
            bad(Violation("deadline", 0, 0, f"compute time {float(used):.6g}s > {cg.mu_deadline}s"))
    return rep


def _compute_time(s: Schedule, cg: CostedGraph) -> Fraction:
    per_op = s.R.sum(axis=0)
    return sum((int(c) * Fraction(float(p)) for c, p in zip(per_op, cg.psi_compute)), Fraction(0))


def evaluate(s: Schedule, cg: CostedGraph) -> Metrics:
    F = lambda x: Fraction(float(x))  # noqa: E731
    r, mi, mo = (m.sum(axis=0) for m in (s.R, s.MIN, s.MOUT))
    energy = Fraction(0)
    for i in range(cg.n):
        energy += int(r[i]) * F(cg.phi_compute[i])
        energy += int(mi[i]) * F(cg.phi_pagein[i])
        energy += int(mo[i]) * F(cg.phi_pageout[i])
    peak = max(max(row) for row in memory_profile(s, cg))
    return Metrics(
        energy=energy,
        compute_time=_compute_time(s, cg),
        peak_ram=peak,
        pagein_count=int(mi.sum()),
        pageout_count=int(mo.sum()),
        remat_count=int(r.sum()) - cg.n,
    )


def complete_storage(cg: CostedGraph, R, MIN=None, MOUT=None) -> Schedule:
    """Smallest residency matrices that make the given compute/paging events legal.

    Raises ScheduleError if some use can never be satisfied (a tensor would
    have to be resident or on flash before the first step).
    """
    g = cg.graph
    R = np.asarray(R, dtype=bool)
    n = R.shape[0]
    MIN = np.zeros_like(R) if MIN is None else np.asarray(MIN, dtype=bool)
    MOUT = np.zeros_like(R) if MOUT is None else np.asarray(MOUT, dtype=bool)
    SRAM = np.zeros_like(R)
    SAUX = np.zeros_like(R)
    for t in range(n - 1, -1, -1):
        for i in range(n):
            need = bool(MOUT[t, i])
            if not R[t, i] and any(R[t, j] for j in g.users[i]):
                need = True
            if t + 1 < n and SRAM[t + 1, i] and not (R[t, i] or MIN[t, i]):
                need = True
            SRAM[t, i] = need
            SAUX[t, i] = bool(MIN[t, i]) or (t + 1 < n and SAUX[t + 1, i] and not MOUT[t, i])
    if SRAM[0].any() or SAUX[0].any():
        bad = sorted(set(np.flatnonzero(SRAM[0]) + 1) | set(np.flatnonzero(SAUX[0]) + 1))
        raise ScheduleError(f"tensors {bad} would need to exist before the first step")
    return Schedule(R, SRAM, SAUX, MIN, MOUT)


def diagonal_schedule(cg: CostedGraph) -> Schedule:
    """Compute every op once, keep each output until its last use."""
    return complete_storage(cg, np.eye(cg.n, dtype=bool))


# -- files -----------------------------------------------------------------

def _num(x):
    if x is None:
        return None
    if isinstance(x, Fraction):
        return str(x)
    return "inf" if math.isinf(x) else x


def _unnum(x):
    if x is None:
        return None
    if x == "inf":
        return math.inf
    if isinstance(x, str):
        return Fraction(x)
    return x


def save_schedule(s: Schedule, path=None, *, cg: CostedGraph | None = None, objective=None, name=None) -> str:
    doc = {"n": s.n, "matrices": {m: ["".join("1" if b else "0" for b in row) for row in getattr(s, m)] for m in MATRICES}}
    if cg is not None:
        doc["graph"] = cg.graph.digest()
        doc["budget"] = {"mu_ram": _num(cg.mu_ram), "mu_deadline": _num(cg.mu_deadline)}
    if objective is not None:
        doc["objective"] = str(Fraction(objective))
        doc["objective_float"] = float(objective)
    if name is not None:
        doc["name"] = name
    text = json.dumps(doc, indent=1) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_schedule(source) -> tuple[Schedule, dict]:
    """Return the schedule and its metadata (graph digest, budget, objective, name)."""
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(source).read_text()
    doc = json.loads(text)
    mats = []
    for m in MATRICES:
        rows = doc["matrices"][m]
        mats.append(np.array([[c == "1" for c in row] for row in rows], dtype=bool).reshape(len(rows), -1))
    meta = {k: doc.get(k) for k in ("graph", "objective", "name")}
    if "budget" in doc:
        meta["budget"] = {k: _unnum(v) for k, v in doc["budget"].items()}
    if meta["objective"] is not None:
        meta["objective"] = Fraction(meta["objective"])
    return Schedule(*mats), meta


# Compact encoding: b"RPS1", u16 n, then per matrix (R, SRAM, SAUX, MIN, MOUT)
# a u32 run count and u16 run lengths over the row-major bits, alternating
# 0-runs and 1-runs and starting with a 0-run. Everything little-endian.
_MAGIC = b"RPS1"


def encode_binary(s: Schedule) -> bytes:
    out = bytearray(_MAGIC)
    out += struct.pack("<H", s.n)
    for m in MATRICES:
        bits = getattr(s, m).ravel()
        runs: list[int] = []
        cur, length = False, 0
        for b in bits:
            if bool(b) == cur:
                length += 1
                continue
            runs.append(length)
            cur, length = bool(b), 1
        runs.append(length)
        split: list[int] = []
        for r in runs:
            while r > 0xFFFF:
                split += [0xFFFF, 0]
                r -= 0xFFFF
            split.append(r)
        out += struct.pack("<I", len(split))
        out += struct.pack(f"<{len(split)}H", *split)
    return bytes(out)


def decode_binary(blob: bytes) -> Schedule:
    if blob[:4] != _MAGIC:
        raise ScheduleError("not a binary schedule")
    (n,) = struct.unpack_from("<H", blob, 4)
    off = 6
    mats = []
    for _ in MATRICES:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        runs = struct.unpack_from(f"<{count}H", blob, off)
        off += 2 * count
        bits: list[bool] = []
        cur = False
        for r in runs:
            bits += [cur] * r
            cur = not cur
        if len(bits) != n * n:
            raise ScheduleError("run lengths do not cover the matrix")
        mats.append(np.array(bits, dtype=bool).reshape(n, n))
    return Schedule(*mats)
