"""Walk the mixed eight-layer network down a ladder of RAM budgets.

The network alternates heavy, cheap and medium layers, so at a tight budget
the best schedule recomputes the cheap activations and pages the expensive
ones out. Recompute-only and paging-only schedules each have to pay for the
layers they handle badly, and the greedy page-first heuristic pays more.

Run:  python demos/energy_vs_budget.py
"""

from fractions import Fraction

from rematpage.baselines import capuchin_greedy, solve_restricted
from rematpage.bench import full_memory_peak
from rematpage.costmodel import attach, mixed_eight_profile
from rematpage.graph import build_training_graph, mixed_eight_spec


def main():
    g = build_training_graph(mixed_eight_spec())
    cg = attach(g, mixed_eight_profile(g))
    peak = full_memory_peak(cg)
    floor = cg.energy_floor()
    print(f"{g.n} nodes, one-pass peak {peak} B, energy floor {float(floor):.5f} J\n")
    print(f"{'budget':>8} {'integrated':>11} {'remat':>8} {'paging':>8} {'greedy':>8}   remats/page-ins")

    for mu in range(peak, 12_287, -2048):
        b = cg.with_budget(mu)
        runs = {m: solve_restricted(b, m, solver="lpfile") for m in ("integrated", "remat-only", "paging-only")}
        runs["greedy"] = capuchin_greedy(b)

        def rel(r):
            return "  --" if r.energy is None else f"{float(Fraction(r.energy) / floor):8.3f}"

        best = runs["integrated"]
        mix = "" if best.metrics is None else f"{best.metrics.remat_count}/{best.metrics.pagein_count}"
        print(f"{mu:>8} {rel(best):>11} {rel(runs['remat-only']):>8} {rel(runs['paging-only']):>8} "
              f"{rel(runs['greedy']):>8}   {mix}")

    print("\nEnergies are relative to the floor; -- means no schedule fits the budget.")


if __name__ == "__main__":
    main()
