"""From a solved schedule to an instruction stream, then hide the page-ins.

A four-layer chain is solved at a budget that forces one tensor off the
device. The emitted plan issues each page-in in the step that needs it,
so the compute stream stalls on the transfer. ``hide_latency`` moves the
page-in earlier whenever memory allows and the stall disappears.

Run:  python demos/plan_and_overlap.py
"""

import math

import numpy as np

from rematpage.costmodel import attach, profile_from_dict
from rematpage.graph import GraphSpec, build_training_graph
from rematpage.planner import emit_plan, format_plan, hide_latency, simulate
from rematpage.schedule import complete_storage, verify


def main():
    g = build_training_graph(GraphSpec("chain", 4))
    n = g.n
    prof = profile_from_dict({
        "phi_compute": [1] * n, "phi_pagein": [1] * n, "phi_pageout": [1] * n,
        "psi_compute": [1] * n, "psi_pagein": [1.5] * n, "psi_pageout": [0.5] * n,
        "mem_out": [1] * n,
    })
    cg = attach(g, prof, math.inf)

    # f1 and f2 leave after their forward use and both come back for b2
    R = np.eye(n, dtype=bool)
    MIN = np.zeros((n, n), dtype=bool)
    MOUT = np.zeros((n, n), dtype=bool)
    MOUT[1, 0] = MOUT[2, 1] = True
    MIN[5, 0] = MIN[5, 1] = True
    s = complete_storage(cg, R, MIN, MOUT)
    assert verify(s, cg).ok

    plan = emit_plan(s, cg)
    before = simulate(plan, cg)
    print("as emitted:")
    print(format_plan(plan, cg))
    print(f"wall clock {before.wall_clock:.2f} s, compute {before.compute_time:.2f} s, "
          f"stalls {[round(x, 2) for x in before.stalls if x]}\n")

    moved = hide_latency(plan, cg)
    after = simulate(moved, cg)
    print("after hide_latency:")
    print(format_plan(moved, cg))
    print(f"wall clock {after.wall_clock:.2f} s, hidden transfer {after.hidden_transfer:.2f} s, "
          f"all page-ins hidden: {moved.latency_hidden}")

    sync = simulate(moved, cg, sync_paging=True)
    print(f"\nwith blocking transfers the same plan takes {sync.wall_clock:.2f} s")


if __name__ == "__main__":
    main()
