"""Training dataflow graphs: forward + loss + backward operators in a fixed order."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

__all__ = [
    "GraphSpec",
    "TrainingGraph",
    "ValidationReport",
    "InvalidSpec",
    "InvalidGraph",
    "build_training_graph",
    "validate",
    "mixed_eight_spec",
    "load_graph",
    "save_graph",
]

KINDS = ("chain", "skip-chain", "attention-block")
OP_TAGS = ("cheap", "medium", "heavy")


class InvalidSpec(ValueError):
    pass


class InvalidGraph(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    """Recipe for a synthetic training graph.

    ``tags`` holds one op class per layer (``cheap``, ``medium`` or ``heavy``)
    and drives synthetic cost generation. ``skips`` lists extra forward
    edges ``(a, b)`` meaning layer ``b`` also consumes the output of layer
    ``a``; it is only honoured for ``skip-chain`` and, when left empty, a
    residual every two layers is used.
    """

    kind: str = "chain"
    depth: int = 1
    tags: tuple[str, ...] = ()
    skips: tuple[tuple[int, int], ...] = ()

    def layer_tags(self) -> tuple[str, ...]:
        return self.tags if self.tags else ("medium",) * self.depth

    def check(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown graph kind {self.kind!r}")
        if self.depth < 1:
            raise InvalidSpec("depth must be >= 1")
        tags = self.layer_tags()
        if len(tags) != self.depth:
            raise InvalidSpec(f"need {self.depth} layer tags, got {len(tags)}")
        bad = [t for t in tags if t not in OP_TAGS]
        if bad:
            raise InvalidSpec(f"unknown op tags {bad}")
        for a, b in self.skips:
            if not 1 <= a < b <= self.depth:
                raise InvalidSpec(f"skip ({a}, {b}) out of range")


def mixed_eight_spec() -> GraphSpec:
    """Eight-layer chain: two compute-heavy layers up front, then cheap and
    medium layers alternating.

    The heavy activations sit idle for most of the step sequence, so they are
    natural paging candidates, while the cheap ones are natural to recompute.
    """
    tags = ("heavy", "heavy", "cheap", "medium", "cheap", "medium", "cheap", "medium")
    return GraphSpec("chain", 8, tags)


@dataclass(frozen=True)
class TrainingGraph:
    """A DAG whose execution order is fixed.

    Node ids are integers; ``order`` lists ids by timestep. Algorithms work
    on *positions* (0-based index into ``order``), so position ``p`` runs at
    timestep ``p + 1``.
    """

    ids: tuple[int, ...]
    labels: tuple[str, ...]
    edges: frozenset[tuple[int, int]]
    order: tuple[int, ...]
    tags: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.ids)

    @cached_property
    def position(self) -> dict[int, int]:
        return {nid: p for p, nid in enumerate(self.order)}

    @cached_property
    def _by_position(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        lab = dict(zip(self.ids, self.labels))
        tag = dict(zip(self.ids, self.tags)) if self.tags else {}
        return (
            tuple(lab[i] for i in self.order),
            tuple(tag.get(i, "medium") for i in self.order),
        )

    @property
    def pos_labels(self) -> tuple[str, ...]:
        return self._by_position[0]

    @property
    def pos_tags(self) -> tuple[str, ...]:
        return self._by_position[1]

    @cached_property
    def pos_edges(self) -> tuple[tuple[int, int], ...]:
        pos = self.position
        return tuple(sorted((pos[a], pos[b]) for a, b in self.edges))

    @cached_property
    def deps(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in self.pos_edges:
            out[b].append(a)
        return tuple(tuple(sorted(d)) for d in out)

    @cached_property
    def users(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in self.pos_edges:
            out[a].append(b)
        return tuple(tuple(sorted(u)) for u in out)

    def require_valid(self) -> None:
        report = validate(self)
        if not report.ok:
            raise InvalidGraph("; ".join(report.errors))

    def to_dict(self) -> dict:
        d = {
            "nodes": [{"id": i, "label": l} for i, l in zip(self.ids, self.labels)],
            "edges": [list(e) for e in sorted(self.edges)],
            "order": list(self.order),
        }
        if self.tags:
            d["tags"] = {str(i): t for i, t in zip(self.ids, self.tags)}
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingGraph":
        nodes = doc["nodes"]
        ids = tuple(int(nd["id"]) for nd in nodes)
        labels = tuple(str(nd.get("label", nd["id"])) for nd in nodes)
        edges = frozenset((int(a), int(b)) for a, b in doc["edges"])
        order = tuple(int(i) for i in doc["order"])
        tags: tuple[str, ...] = ()
        if "tags" in doc:
            tags = tuple(doc["tags"].get(str(i), "medium") for i in ids)
        return cls(ids, labels, edges, order, tags)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ValidationReport:
    ok: bool = True
    errors: list[str] = field(default_factory=list)

    def fail(self, msg: str) -> None:
        self.ok = False
        self.errors.append(msg)


def validate(g: TrainingGraph) -> ValidationReport:
    rep = ValidationReport()
    n = len(g.ids)
    if len(set(g.ids)) != n:
        rep.fail("dense: duplicate node ids")
    if sorted(g.ids) != list(range(1, n + 1)):
        rep.fail("dense: node ids are not exactly 1..n")
    if len(g.labels) != n:
        rep.fail("dense: label count differs from node count")
    if sorted(g.order) != sorted(g.ids) or len(g.order) != n:
        rep.fail("order: not a bijection onto the node ids")
        return rep
    known = set(g.ids)
    for a, b in sorted(g.edges):
        if a not in known or b not in known:
            rep.fail(f"edge: ({a}, {b}) references an unknown node")
        elif a == b:
            rep.fail(f"acyclic: self loop on {a}")
    if not rep.ok:
        return rep

    # Kahn's algorithm, independent of the declared order.
    indeg = {i: 0 for i in g.ids}
    succ: dict[int, list[int]] = {i: [] for i in g.ids}
    for a, b in g.edges:
        indeg[b] += 1
        succ[a].append(b)
    ready = [i for i in g.ids if indeg[i] == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if seen != n:
        rep.fail("acyclic: graph contains a cycle")

    pos = {nid: p for p, nid in enumerate(g.order)}
    for a, b in sorted(g.edges):
        if pos[a] >= pos[b]:
            rep.fail(f"order: edge ({a}, {b}) goes from index {pos[a] + 1} to {pos[b] + 1}")

    sinks = [i for i in g.ids if not succ[i]]
    if len(sinks) != 1:
        rep.fail(f"sink: expected exactly one final node, found {len(sinks)}")
    elif rep.ok and pos[sinks[0]] != n - 1:
        rep.fail("sink: final node is not last in the order")
    return rep


def _forward_edges(spec: GraphSpec) -> list[tuple[int, int]]:
    d = spec.depth
    fwd = [(i, i + 1) for i in range(1, d)]
    if spec.kind == "skip-chain":
        skips = spec.skips or tuple((i, i + 2) for i in range(1, d - 1, 2))
        fwd += list(skips)
    elif spec.kind == "attention-block":
        # blocks of three layers (projection, mixing, output); the output
        # layer sees the projection and the block input (residual)
        for s in range(1, d - 1, 3):
            fwd.append((s, s + 2))
            if s > 1:
                fwd.append((s - 1, s + 2))
    return sorted(set(fwd))


def build_training_graph(spec: GraphSpec) -> TrainingGraph:
    """Forward layers, a loss node, then backward layers in reverse order.

    The gradient op of layer ``i`` consumes the gradients of every layer
    that read layer ``i``'s output (the loss for the last layer), plus the
    activations layer ``i`` read and produced.
    """
    spec.check()
    d = spec.depth
    tags = spec.layer_tags()
    f = lambda i: i  # noqa: E731
    loss = d + 1
    b = lambda i: 2 * d + 2 - i  # noqa: E731

    fwd = _forward_edges(spec)
    inputs = {i: [a for a, c in fwd if c == i] for i in range(1, d + 1)}
    readers = {i: [c for a, c in fwd if a == i] for i in range(1, d + 1)}

    edges = {(f(a), f(c)) for a, c in fwd}
    edges.add((f(d), loss))
    for i in range(1, d + 1):
        grads = [b(c) for c in readers[i]] or [loss]
        for gsrc in grads:
            edges.add((gsrc, b(i)))
        edges.add((f(i), b(i)))
        for a in inputs[i]:
            edges.add((f(a), b(i)))

    n = 2 * d + 1
    labels = [f"f{i}" for i in range(1, d + 1)] + ["loss"] + [f"b{i}" for i in range(d, 0, -1)]
    node_tags = list(tags) + ["cheap"] + [tags[i - 1] for i in range(d, 0, -1)]
    ids = tuple(range(1, n + 1))
    return TrainingGraph(ids, tuple(labels), frozenset(edges), ids, tuple(node_tags))


def chain_depth(g: TrainingGraph) -> int | None:
    """Depth if ``g`` is exactly the chain construction, else None."""
    if g.n % 2 == 0:
        return None
    d = (g.n - 1) // 2
    ref = build_training_graph(GraphSpec("chain", d))
    mine = {(g.position[a], g.position[b]) for a, b in g.edges}
    theirs = {(a - 1, b - 1) for a, b in ref.edges}
    return d if mine == theirs else None


def save_graph(g: TrainingGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=1, sort_keys=True) + "\n")


def load_graph(path: str | Path) -> TrainingGraph:
    return TrainingGraph.from_dict(json.loads(Path(path).read_text()))
