"""Hand the model to an outside solver and check what comes back.

The instance is written in CPLEX LP format, solved by HiGHS, and the
solution is read back as ``name value`` lines. The built-in exact search
solves the same model, and the two answers are compared and turned into
schedules that are verified independently of the solver.

Run:  python demos/lp_round_trip.py
"""

from rematpage.bench import full_memory_peak, make_instance
from rematpage.milp import build_milp
from rematpage.schedule import evaluate, from_assignment, verify
from rematpage.solver import format_solution, parse_lp, parse_solution, solve_exact, solve_external, write_lp


def main():
    base = make_instance("chain", 3, "mixed", 0).base
    cg = base.with_budget(int(0.85 * full_memory_peak(base)))
    inst = build_milp(cg)
    text = write_lp(inst)
    print(f"LP file: {len(text.splitlines())} lines, {len(inst.variables)} variables, "
          f"{len(inst.constraints)} constraints")

    again = parse_lp(text)
    ext = solve_external(again)
    if ext.assignment is None:
        print(f"HiGHS: {ext.status.value}, nothing to read back")
        return
    values = format_solution(ext.assignment, again)
    a = parse_solution(values, inst)
    print(f"HiGHS:    {ext.status.value}, energy {float(a.objective_value):.6g} J")

    own = solve_exact(inst)
    print(f"built-in: {own.status.value}, energy {float(own.objective):.6g} J, {own.nodes} nodes")

    for label, asg in (("HiGHS", a), ("built-in", own.assignment)):
        s = from_assignment(asg, inst)
        m = evaluate(s, cg)
        print(f"{label:>9} schedule verifies: {verify(s, cg).ok}, peak {m.peak_ram} B of {cg.mu_ram}, "
              f"{m.remat_count} recomputations, {m.pagein_count} page-ins")


if __name__ == "__main__":
    main()
