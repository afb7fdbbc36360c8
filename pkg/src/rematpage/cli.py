"""Command-line front end.

Subcommands::

    rematpage gen KIND DEPTH REGIME SEED --out-dir DIR
    rematpage solve --graph G --profile P [--ram B] [--deadline S]
                    [--mode integrated|remat|paging] [--solver builtin|lpfile]
                    [--time-limit S] [--out SCHEDULE]
                    [--write-lp FILE] [--read-solution FILE]
    rematpage verify --graph G --profile P --schedule S [--ram B] [--deadline S]
    rematpage plan --graph G --profile P --schedule S [--hide-latency]
                   [--sync-paging] [--out PLAN]
    rematpage bench --spec chain:4,mixed-eight --regimes mixed --seeds 0
                    --budget-sweep 0.4:1.0:4 [--deadline-sweep 1.0,inf]
                    [--strategies ...] [--out rows.csv]

Exit codes: 0 success (optimal or feasible), 1 usage / file / model errors,
2 infeasible (or a schedule that fails verification), 3 time limit reached
without any feasible point.

LP round trip: ``solve --write-lp model.lp`` writes the instance and stops.
Solve it with any LP-format MILP solver, dump the values as ``<name> <value>``
lines, then ``solve --read-solution values.txt`` (same graph, profile and
budgets) checks the answer and writes the schedule file.

Set ``REMATPAGE_THREADS`` to cap the threads used by the external solver.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import bench as benchmod
from .costmodel import REGIMES, InfeasibleBudget, attach, load_profile, mixed_eight_profile, save_profile, synth_profile
from .graph import GraphSpec, build_training_graph, load_graph, mixed_eight_spec, save_graph
from .milp import build_milp, restrict
from .planner import emit_plan, format_plan, hide_latency, simulate
from .schedule import evaluate, from_assignment, load_schedule, save_schedule, verify
from .solver import SolveLimits, Status, parse_solution, solve_exact, solve_external, write_lp

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_TIMEOUT = 0, 1, 2, 3
_MODES = {"integrated": None, "remat": "remat-only", "paging": "paging-only"}


class CliError(Exception):
    pass


def _number(text: str) -> float:
    if text.lower() in ("inf", "none"):
        return math.inf
    return float(text)


def _load(args, ram=None, deadline=None):
    try:
        g = load_graph(args.graph)
        p = load_profile(Path(args.profile))
    except FileNotFoundError as exc:
        raise CliError(f"no such file: {exc.filename}") from None
    return attach(g, p, math.inf if ram is None else ram, math.inf if deadline is None else deadline)


def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.regime == "mixed-eight":
        g = build_training_graph(mixed_eight_spec())
        p = mixed_eight_profile(g)
    else:
        regime = benchmod.REGIME_ALIASES.get(args.regime, args.regime)
        if regime not in REGIMES:
            raise CliError(f"unknown regime {args.regime!r}")
        g = build_training_graph(GraphSpec(args.kind, args.depth))
        p = synth_profile(g, regime, args.seed)
    stem = f"{args.kind}-{args.depth}-{args.regime}-{args.seed}"
    save_graph(g, out / f"{stem}.graph.json")
    save_profile(p, out / f"{stem}.profile.json")
    print(f"wrote {out / (stem + '.graph.json')} and {out / (stem + '.profile.json')}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cg = _load(args, args.ram, args.deadline)
    inst = build_milp(cg)
    if _MODES[args.mode]:
        inst = restrict(inst, _MODES[args.mode])
    if args.write_lp:
        Path(args.write_lp).write_text(write_lp(inst))
        print(f"wrote {args.write_lp}: {len(inst.variables)} variables, {len(inst.constraints)} constraints")
        return EXIT_OK
    limits = SolveLimits(time_limit=args.time_limit)
    if args.read_solution:
        a = parse_solution(Path(args.read_solution).read_text(), inst)
        status, gap = "feasible", None
    else:
        run = solve_exact if args.solver == "builtin" else solve_external
        res = run(inst, limits)
        if res.status is Status.INFEASIBLE:
            print("status: infeasible")
            return EXIT_INFEASIBLE
        if res.assignment is None:
            print("status: timed_out (no feasible point found)")
            return EXIT_TIMEOUT
        a, status, gap = res.assignment, res.status.value, res.gap
    s = from_assignment(a, inst)
    m = evaluate(s, cg)
    print(f"status: {status}")
    print(f"energy_J: {float(a.objective_value):.9g}")
    print(f"gap: {'' if gap is None else f'{gap:.3g}'}")
    print(f"peak_ram_bytes: {m.peak_ram}")
    print(f"compute_time_s: {float(m.compute_time):.9g}")
    print(f"remat_count: {m.remat_count}")
    print(f"pagein_count: {m.pagein_count}")
    print(f"pageout_count: {m.pageout_count}")
    if args.out:
        save_schedule(s, args.out, cg=cg, objective=a.objective_value, name=args.mode)
    return EXIT_OK


def _budgets_from(args, meta):
    budget = meta.get("budget") or {}
    ram = args.ram if args.ram is not None else budget.get("mu_ram")
    deadline = args.deadline if args.deadline is not None else budget.get("mu_deadline")
    return ram, deadline


def cmd_verify(args) -> int:
    s, meta = load_schedule(Path(args.schedule))
    ram, deadline = _budgets_from(args, meta)
    cg = _load(args, ram, deadline)
    if meta.get("graph") and meta["graph"] != cg.graph.digest():
        print("warning: schedule was produced for a different graph", file=sys.stderr)
    rep = verify(s, cg)
    if rep.ok:
        m = evaluate(s, cg)
        print(f"ok: energy_J={float(m.energy):.9g} peak_ram_bytes={m.peak_ram}")
        return EXIT_OK
    for v in rep.violations:
        print(f"violation: {v}")
    return EXIT_INFEASIBLE


def cmd_plan(args) -> int:
    s, meta = load_schedule(Path(args.schedule))
    ram, deadline = _budgets_from(args, meta)
    cg = _load(args, ram, deadline)
    p = emit_plan(s, cg)
    if args.hide_latency:
        p = hide_latency(p, cg, sync_paging=args.sync_paging)
        if p.latency_hidden is False:
            print("note: page-ins could not all be hidden; plan left as emitted")
    rep = simulate(p, cg, sync_paging=args.sync_paging)
    text = format_plan(p, cg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"ok: {rep.ok}")
    print(f"wall_clock_s: {rep.wall_clock:.9g}")
    print(f"hidden_transfer_s: {rep.hidden_transfer:.9g}")
    print(f"peak_ram_bytes: {rep.peak_ram}")
    if not rep.ok:
        for v in rep.violations:
            print(f"violation: {v}")
        return EXIT_INFEASIBLE
    return EXIT_OK


def _parse_specs(text: str, regimes: list[str], seeds: list[int]) -> list[benchmod.Instance]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if item == "mixed-eight":
            out.append(benchmod.make_instance("mixed-eight", 8, ""))
            continue
        kind, _, depth = item.partition(":")
        if not depth:
            raise CliError(f"spec {item!r} should look like kind:depth")
        for regime in regimes:
            for seed in seeds:
                out.append(benchmod.make_instance(kind, int(depth), regime, seed))
    return out


def cmd_bench(args) -> int:
    instances = _parse_specs(args.spec, args.regimes.split(","), [int(x) for x in args.seeds.split(",")])
    budgets = benchmod.parse_sweep(args.budget_sweep)
    deadlines = benchmod.parse_sweep(args.deadline_sweep) if args.deadline_sweep else None
    strategies = tuple(args.strategies.split(",")) if args.strategies else benchmod.STRATEGIES
    unknown = set(strategies) - set(benchmod.STRATEGIES)
    if unknown:
        raise CliError(f"unknown strategies {sorted(unknown)}")
    rows = benchmod.run_bench(instances, budgets, deadlines, strategies, args.solver,
                              SolveLimits(time_limit=args.time_limit))
    text = benchmod.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rematpage", description="Energy-optimal recompute/paging schedules.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic graph and cost profile")
    g.add_argument("kind", choices=["chain", "skip-chain", "attention-block"])
    g.add_argument("depth", type=int)
    g.add_argument("regime", help=f"one of {', '.join(REGIMES)}, 'mixed', or 'mixed-eight'")
    g.add_argument("seed", type=int)
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen)

    def inputs(p, schedule=False):
        p.add_argument("--graph", required=True)
        p.add_argument("--profile", required=True)
        if schedule:
            p.add_argument("--schedule", required=True)
        p.add_argument("--ram", type=_number, default=None, help="RAM budget in bytes")
        p.add_argument("--deadline", type=_number, default=None, help="compute-time budget in seconds")

    s = sub.add_parser("solve", help="find the energy-minimal schedule")
    inputs(s)
    s.add_argument("--mode", choices=list(_MODES), default="integrated")
    s.add_argument("--solver", choices=["builtin", "lpfile"], default="builtin")
    s.add_argument("--time-limit", type=float, default=600.0)
    s.add_argument("--out")
    s.add_argument("--write-lp", metavar="FILE")
    s.add_argument("--read-solution", metavar="FILE")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check a schedule file")
    inputs(v, schedule=True)
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plan", help="emit and simulate an execution plan")
    inputs(pl, schedule=True)
    pl.add_argument("--hide-latency", action="store_true")
    pl.add_argument("--sync-paging", action="store_true")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="sweep budgets and strategies, write CSV")
    b.add_argument("--spec", default="mixed-eight", help="comma list of kind:depth or 'mixed-eight'")
    b.add_argument("--regimes", default="mixed")
    b.add_argument("--seeds", default="0")
    b.add_argument("--budget-sweep", default="0.4:1.0:4")
    b.add_argument("--deadline-sweep", default=None)
    b.add_argument("--strategies", default=None)
    b.add_argument("--solver", choices=["builtin", "lpfile"], default="lpfile")
    b.add_argument("--time-limit", type=float, default=600.0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except InfeasibleBudget as exc:
        print(f"status: infeasible ({exc})")
        return EXIT_INFEASIBLE
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
