import contextlib
import math
import os

import pytest
from hypothesis import HealthCheck, settings

from rematpage.bench import full_memory_peak, make_instance
from rematpage.costmodel import attach, mixed_eight_profile
from rematpage.graph import build_training_graph, mixed_eight_spec
from rematpage.schedule import evaluate, from_assignment, verify

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("HYPOTHESIS_EXAMPLES", "40")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[str, str] = {}


@contextlib.contextmanager
def criterion(tag: str, what: str):
    try:
        yield
    except BaseException:
        ACCEPTANCE[tag] = f"FAIL {tag} {what}"
        print(ACCEPTANCE[tag])
        raise
    ACCEPTANCE[tag] = f"PASS {tag} {what}"
    print(ACCEPTANCE[tag])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(ACCEPTANCE, key=lambda t: int(t[2:])):
        terminalreporter.write_line(ACCEPTANCE[tag])


def checked(res, inst, cg):
    """Cross-check a solver result against the schedule module; return the schedule."""
    if res.assignment is None:
        return None
    s = from_assignment(res.assignment, inst)
    rep = verify(s, cg)
    assert rep.ok, rep.violations[:3]
    assert evaluate(s, cg).energy == res.objective
    return s


@pytest.fixture(scope="session")
def eight():
    g = build_training_graph(mixed_eight_spec())
    return attach(g, mixed_eight_profile(g))


@pytest.fixture(scope="session")
def chain3():
    return make_instance("chain", 3, "mixed", 0).base


def budget_at(cg, frac):
    return int(math.floor(frac * full_memory_peak(cg)))


def random_schedule(data, cg, max_extra=6):
    """Draw a verified schedule for ``cg`` (budgets ignored) from hypothesis ``data``.

    Extra recomputations and page-out/page-in pairs are scattered over the
    diagonal; the storage matrices are then completed and the draw is
    rejected unless the result verifies without memory or deadline limits.
    """
    import numpy as np
    from hypothesis import assume
    from hypothesis import strategies as st

    from rematpage.schedule import ScheduleError, complete_storage, verify

    n = cg.n
    R = np.eye(n, dtype=bool)
    MIN = np.zeros((n, n), dtype=bool)
    MOUT = np.zeros((n, n), dtype=bool)
    cells = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    for t, i in data.draw(st.lists(cells, max_size=max_extra), label="remat"):
        if t > i:
            R[t, i] = True
    for t_out, gap, i in data.draw(
        st.lists(st.tuples(st.integers(1, n - 1), st.integers(1, n), st.integers(0, n - 1)), max_size=3),
        label="paging",
    ):
        t_in = t_out + gap
        if t_out >= i and t_in < n:
            MOUT[t_out, i] = True
            MIN[t_in, i] = True
    try:
        s = complete_storage(cg, R, MIN, MOUT)
    except ScheduleError:
        assume(False)
    free = cg.with_budget(math.inf, math.inf)
    assume(verify(s, free).ok)
    return s
