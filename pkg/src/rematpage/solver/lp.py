"""LP-file bridge: write instances for external MILP solvers and read answers back.

Numbers are written with ``repr(float(x))``. Every coefficient in a built
instance is either a whole number of scaled memory units or came from a float
cost, so parsing the text back gives exactly the original rationals.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
import time
from fractions import Fraction
from pathlib import Path

from ..milp import Constraint, MilpInstance, TAGS, Var
from .bnb import Assignment, ModelError, SolveLimits, SolveResult, Status, complete_assignment

__all__ = [
    "write_lp",
    "parse_lp",
    "parse_solution",
    "format_solution",
    "solve_external",
    "LpFormatError",
    "SolutionError",
]

BINARY_TOL = 1e-6
_TAG_CODES = {tag: tag.replace("-", "_") for tag in TAGS + ("mode",)}
_TAG_NAMES = {code: tag for tag, code in _TAG_CODES.items()}
_WRAP = 8  # terms per line


class LpFormatError(ValueError):
    pass


class SolutionError(ValueError):
    pass


def _num(x: Fraction) -> str:
    # LP syntax has no quotients; values that are not doubles get rounded
    return repr(float(x))


def _terms(coeffs, variables) -> list[str]:
    out = []
    for v, c in coeffs:
        sign = "-" if c < 0 else "+"
        out.append(f"{sign} {_num(abs(c))} {variables[v].name}")
    if out and out[0].startswith("+ "):
        out[0] = out[0][2:]
    return out


def _lines(head: str, terms: list[str], tail: str = "") -> list[str]:
    chunks = [" ".join(terms[i:i + _WRAP]) for i in range(0, len(terms), _WRAP)] or ["0"]
    lines = [f" {head} {chunks[0]}"]
    lines += [f"   {c}" for c in chunks[1:]]
    if tail:
        lines[-1] += f" {tail}"
    return lines


def write_lp(inst: MilpInstance) -> str:
    vs = inst.variables
    meta = (f"\\ rematpage n={inst.n} byte_scale={inst.byte_scale} "
            f"mem_offset={inst.mem_offset} mode={inst.meta.get('mode', 'integrated')}")
    out = [meta, "Minimize"]
    out += _lines("obj:", _terms(inst.objective, vs))
    out.append("Subject To")
    for j, c in enumerate(inst.constraints):
        terms = _terms(c.coeffs, vs) if c.coeffs else [f"0 {vs[0].name}"]
        out += _lines(f"c{j}__{_TAG_CODES[c.tag]}:", terms, f"{c.sense} {_num(c.rhs)}")
    out.append("Bounds")
    for v in vs:
        out.append(f" 0 <= {v.name} <= 1" if v.binary else f" {v.name} >= 0")
    out.append("Binary")
    names = [v.name for v in vs if v.binary]
    out += [" " + " ".join(names[i:i + _WRAP]) for i in range(0, len(names), _WRAP)]
    out.append("End")
    return "\n".join(out) + "\n"


_SECTION = re.compile(r"^(minimize|minimum|min|subject to|such that|st|s\.t\.|bounds|binary|binaries|bin|end)$", re.I)


def _parse_expr(text: str, index: dict[str, int]) -> list[tuple[int, Fraction]]:
    text = text.strip()
    coeffs: dict[int, Fraction] = {}
    pos = 0
    tok = re.compile(r"\s*([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*([A-Za-z_][A-Za-z0-9_]*)")
    while pos < len(text):
        m = tok.match(text, pos)
        if not m or m.end() == pos:
            raise LpFormatError(f"cannot parse expression near {text[pos:pos + 30]!r}")
        sign, num, name = m.groups()
        if name not in index:
            raise LpFormatError(f"unknown variable {name!r}")
        c = Fraction(float(num)) if num else Fraction(1)
        if sign == "-":
            c = -c
        v = index[name]
        coeffs[v] = coeffs.get(v, Fraction(0)) + c
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return [(v, c) for v, c in coeffs.items()]


def parse_lp(text: str) -> MilpInstance:
    """Read text produced by :func:`write_lp` back into an instance."""
    meta = {}
    sections: dict[str, list[str]] = {"min": [], "st": [], "bounds": [], "binary": []}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("\\"):
            if "rematpage" in line:
                meta = dict(kv.split("=", 1) for kv in line.split()[2:])
            continue
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            word = m.group(1).lower()
            if word.startswith("min"):
                current = "min"
            elif word.startswith("b") and word != "bounds":
                current = "binary"
            elif word == "bounds":
                current = "bounds"
            elif word == "end":
                current = None
            else:
                current = "st"
            continue
        if current is None:
            raise LpFormatError(f"text outside any section: {line!r}")
        sections[current].append(line)

    variables: list[Var] = []
    for line in sections["bounds"]:
        name = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", line)
        if len(name) != 1:
            raise LpFormatError(f"unsupported bound line {line!r}")
        variables.append(Var.parse(name[0]))
    index = {v.name: j for j, v in enumerate(variables)}
    declared_binary = {n for line in sections["binary"] for n in line.split()}
    if declared_binary != {v.name for v in variables if v.binary}:
        raise LpFormatError("binary section does not match variable kinds")

    def statements(lines):
        buf: list[str] = []
        for line in lines:
            if re.match(r"^[A-Za-z_][A-Za-z0-9_]*:", line) and buf:
                yield " ".join(buf)
                buf = []
            buf.append(line)
        if buf:
            yield " ".join(buf)

    objective: list[tuple[int, Fraction]] = []
    for stmt in statements(sections["min"]):
        objective += _parse_expr(stmt.split(":", 1)[1], index)

    constraints = []
    for stmt in statements(sections["st"]):
        label, body = stmt.split(":", 1)
        m = re.match(r"^(.*?)(<=|>=|=<|=>|=)\s*([-+]?[0-9.eE+-]+)\s*$", body)
        if not m:
            raise LpFormatError(f"cannot parse constraint {stmt!r}")
        lhs, sense, rhs = m.groups()
        sense = {"=<": "<=", "=>": ">="}.get(sense, sense)
        code = label.split("__", 1)[1] if "__" in label else ""
        if code not in _TAG_NAMES:
            raise LpFormatError(f"constraint {label!r} has no known tag")
        coeffs = tuple((v, c) for v, c in _parse_expr(lhs, index) if c != 0)
        constraints.append(Constraint(coeffs, sense, Fraction(float(rhs)), _TAG_NAMES[code]))

    n = int(meta.get("n", max((max(v.t, v.i) for v in variables), default=0)))
    return MilpInstance(
        tuple(variables), tuple(constraints), tuple(objective), n,
        Fraction(meta.get("byte_scale", "1")), int(meta.get("mem_offset", 0)),
        meta={"mode": meta.get("mode", "integrated")},
    )


def format_solution(a: Assignment, inst: MilpInstance) -> str:
    return "".join(f"{v.name} {x}\n" for v, x in zip(inst.variables, a.values))


def parse_solution(text: str, inst: MilpInstance) -> Assignment:
    """Map ``<name> <value>`` lines onto ``inst``.

    Binaries must lie within 1e-6 of 0 or 1; names that are absent count as 0.
    Continuous memory variables are recomputed from the binaries rather than
    trusted, and the result must satisfy every constraint exactly.
    """
    binaries: dict[int, int] = {j: 0 for j, v in enumerate(inst.variables) if v.binary}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolutionError(f"line {lineno}: expected '<name> <value>', got {line!r}")
        name, val = parts
        if name not in inst.index:
            raise SolutionError(f"line {lineno}: unknown variable {name!r}")
        try:
            x = float(Fraction(val)) if "/" in val else float(val)
        except ValueError:
            raise SolutionError(f"line {lineno}: bad value {val!r}") from None
        j = inst.index[name]
        if not inst.variables[j].binary:
            continue
        r = round(x)
        if r not in (0, 1) or abs(x - r) > BINARY_TOL:
            raise SolutionError(f"{name} = {val} is not within {BINARY_TOL} of 0 or 1")
        binaries[j] = int(r)
    a = complete_assignment(inst, binaries)
    bad = inst.violations(a.values)
    if bad:
        first = bad[0]
        what = inst.constraints[first].tag if first >= 0 else inst.variables[-1 - first].name
        raise SolutionError(f"solution violates {len(bad)} constraint(s), first: {what}")
    return a


def solve_external(inst: MilpInstance, limits: SolveLimits | None = None, threads: int | None = None) -> SolveResult:
    """Solve through the LP file with HiGHS, then re-check exactly.

    ``threads`` defaults to the ``REMATPAGE_THREADS`` environment variable.
    """
    try:
        import highspy
    except ImportError as exc:  # pragma: no cover
        raise ModelError("the external bridge needs the highspy package") from exc

    limits = limits or SolveLimits()
    if threads is None and os.environ.get("REMATPAGE_THREADS"):
        threads = int(os.environ["REMATPAGE_THREADS"])
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.lp"
        path.write_text(write_lp(inst))
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("time_limit", float(limits.time_limit))
        h.setOptionValue("mip_rel_gap", float(limits.required_gap))
        h.setOptionValue("mip_abs_gap", 0.0)
        h.setOptionValue("mip_max_nodes", int(limits.node_limit))
        if threads:
            h.setOptionValue("threads", int(threads))
        if h.readModel(str(path)) != highspy.HighsStatus.kOk:
            raise ModelError("HiGHS rejected the LP file")
        h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    elapsed = time.perf_counter() - start
    ms = highspy.HighsModelStatus
    if status == ms.kInfeasible:
        return SolveResult(Status.INFEASIBLE, seconds=elapsed)
    has_point = info.primal_solution_status == 2  # kSolutionStatusFeasible
    if not has_point:
        if status == ms.kOptimal:  # pragma: no cover
            raise ModelError("HiGHS reported optimal without a solution")
        return SolveResult(Status.TIMED_OUT, seconds=elapsed, stats={"highs_status": h.modelStatusToString(status)})

    names = h.getLp().col_names_
    values = h.getSolution().col_value
    text = "".join(f"{nm} {x!r}\n" for nm, x in zip(names, values))
    a = parse_solution(text, inst)
    bound = info.mip_dual_bound
    if status == ms.kOptimal:
        st, gap = Status.OPTIMAL, 0.0
    else:
        st = Status.FEASIBLE
        obj = float(a.objective_value)
        gap = abs(obj - bound) / max(abs(obj), 1e-12) if math.isfinite(bound) else math.inf
    return SolveResult(
        st, a, gap=gap, nodes=int(info.mip_node_count), seconds=elapsed,
        bound=Fraction(bound) if math.isfinite(bound) else None,
        stats={"highs_status": h.modelStatusToString(status)},
    )
