"""Budget / deadline sweeps over every strategy, one row per run."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, fields
from fractions import Fraction

import numpy as np

from .baselines import BaselineResult, Unsupported, capuchin_greedy, chen_sqrt, solve_restricted
from .costmodel import CostedGraph, attach, mixed_eight_profile, synth_profile
from .graph import GraphSpec, build_training_graph, mixed_eight_spec
from .schedule import diagonal_schedule, memory_profile
from .solver import SolveLimits

__all__ = [
    "BenchRow",
    "Instance",
    "STRATEGIES",
    "parse_sweep",
    "make_instance",
    "full_memory_peak",
    "run_bench",
    "rows_to_csv",
]

STRATEGIES = ("integrated", "remat-only", "paging-only", "chen-sqrt", "capuchin-greedy")
REGIME_ALIASES = {"mixed": "mixed-cheap-expensive", "conv": "conv-like"}


@dataclass
class BenchRow:
    instance: str
    budget_frac: float
    mu_ram: int
    deadline_frac: float
    mu_deadline: float
    strategy: str
    status: str
    feasible: bool
    energy: float | None
    rel_energy: float | None
    peak_ram: int | None
    remat_count: int | None
    pagein_count: int | None
    solve_seconds: float
    error: str = ""

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Instance:
    name: str
    base: CostedGraph  # unbounded budgets


def parse_sweep(text: str) -> list[float]:
    """``lo:hi:steps`` (inclusive, evenly spaced) or a comma list."""
    if ":" in text:
        lo, hi, steps = text.split(":")
        k = int(steps)
        if k < 1:
            raise ValueError("sweep needs at least one step")
        if k == 1:
            return [float(hi)]
        return [float(x) for x in np.linspace(float(lo), float(hi), k)]
    return [float(x) for x in text.split(",") if x]


def make_instance(kind: str, depth: int, regime: str, seed: int = 0) -> Instance:
    if kind == "mixed-eight":
        g = build_training_graph(mixed_eight_spec())
        return Instance("mixed-eight", attach(g, mixed_eight_profile(g)))
    regime = REGIME_ALIASES.get(regime, regime)
    g = build_training_graph(GraphSpec(kind, depth))
    p = synth_profile(g, regime, seed)
    return Instance(f"{kind}-{depth}-{regime}-s{seed}", attach(g, p))


def full_memory_peak(cg: CostedGraph) -> int:
    """Peak RAM of the paging- and remat-free schedule."""
    return int(max(max(r) for r in memory_profile(diagonal_schedule(cg), cg)))


def _deadline(frac: float, one_pass: Fraction) -> float:
    """``frac`` times the one-pass compute time, rounded up to a double so
    that a fraction of 1.0 still admits the one-pass schedule exactly."""
    if math.isinf(frac):
        return math.inf
    exact = Fraction(frac) * one_pass
    x = float(exact)
    return x if Fraction(x) >= exact else math.nextafter(x, math.inf)


def _run(strategy: str, cg: CostedGraph, solver: str, limits: SolveLimits) -> BaselineResult:
    if strategy == "chen-sqrt":
        return chen_sqrt(cg)
    if strategy == "capuchin-greedy":
        return capuchin_greedy(cg)
    return solve_restricted(cg, strategy, solver=solver, limits=limits)


def run_bench(
    instances: list[Instance],
    budget_fracs: list[float],
    deadline_fracs: list[float] | None = None,
    strategies=STRATEGIES,
    solver: str = "lpfile",
    limits: SolveLimits | None = None,
) -> list[BenchRow]:
    """Rows come out in (instance, deadline, budget, strategy) order.

    Budgets are fractions of the full-memory peak, deadlines fractions of the
    one-pass compute time (``inf`` for none). A crashing strategy gives a row
    with status ``error`` and the sweep continues.
    """
    limits = limits or SolveLimits()
    deadline_fracs = deadline_fracs or [math.inf]
    rows = []
    for inst in instances:
        peak = full_memory_peak(inst.base)
        floor = inst.base.energy_floor()
        one_pass = inst.base.naive_runtime()
        for dfrac in deadline_fracs:
            mu_deadline = _deadline(dfrac, one_pass)
            for bfrac in budget_fracs:
                mu_ram = int(math.floor(bfrac * peak))
                for strat in strategies:
                    t0 = time.perf_counter()
                    try:
                        cg = inst.base.with_budget(mu_ram, mu_deadline)
                        res = _run(strat, cg, solver, limits)
                        err = ""
                        status = res.status
                    except Unsupported as exc:
                        res, err, status = None, str(exc), "unsupported"
                    except Exception as exc:  # noqa: BLE001 - a bad row must not stop the sweep
                        res, err, status = None, f"{type(exc).__name__}: {exc}", "error"
                    dt = time.perf_counter() - t0
                    m = res.metrics if res is not None else None
                    rows.append(BenchRow(
                        instance=inst.name,
                        budget_frac=bfrac,
                        mu_ram=mu_ram,
                        deadline_frac=dfrac,
                        mu_deadline=mu_deadline,
                        strategy=strat,
                        status=status,
                        feasible=m is not None,
                        energy=None if m is None else float(m.energy),
                        rel_energy=None if m is None else float(Fraction(m.energy) / floor),
                        peak_ram=None if m is None else int(m.peak_ram),
                        remat_count=None if m is None else m.remat_count,
                        pagein_count=None if m is None else m.pagein_count,
                        solve_seconds=round(dt, 4),
                        error=err,
                    ))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BenchRow.header(), lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        w.writerow({k: ("" if v is None else v) for k, v in d.items()})
    return buf.getvalue()
