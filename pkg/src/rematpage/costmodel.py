"""Per-operator energy / time / memory costs and the budgets they run under.

Units are fixed: joules, seconds, bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from .graph import TrainingGraph

__all__ = [
    "CostProfile",
    "CostedGraph",
    "InvalidProfile",
    "CoverageError",
    "InfeasibleBudget",
    "load_profile",
    "save_profile",
    "profile_from_dict",
    "attach",
    "synth_profile",
    "mixed_eight_profile",
    "DEVICE_CLOCKS_HZ",
    "REGIMES",
]

VECTOR_FIELDS = (
    "phi_compute",
    "phi_pagein",
    "phi_pageout",
    "psi_compute",
    "psi_pagein",
    "psi_pageout",
    "mem_out",
)

# Table of evaluated boards: core clock per device.
DEVICE_CLOCKS_HZ = {
    "M0": 48e6,
    "M4": 64e6,
    "A72": 1.5e9,
    "TX2": 2e9,
}
_REFERENCE_CLOCK_HZ = 1e9

REGIMES = ("uniform", "conv-like", "mixed-cheap-expensive") + tuple(
    f"device:{d}" for d in DEVICE_CLOCKS_HZ
)


class InvalidProfile(ValueError):
    pass


class CoverageError(ValueError):
    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"profile does not cover nodes {list(self.missing)}")


class InfeasibleBudget(ValueError):
    pass


@dataclass(eq=False)
class CostProfile:
    """Cost vectors indexed like ``node_ids``."""

    node_ids: tuple[int, ...]
    phi_compute: np.ndarray
    phi_pagein: np.ndarray
    phi_pageout: np.ndarray
    psi_compute: np.ndarray
    psi_pagein: np.ndarray
    psi_pageout: np.ndarray
    mem_out: np.ndarray
    mu_static: int = 0
    device_label: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in VECTOR_FIELDS:
            dtype = np.int64 if name == "mem_out" else np.float64
            setattr(self, name, np.asarray(getattr(self, name), dtype=dtype))
        self.node_ids = tuple(int(i) for i in self.node_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CostProfile):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.mu_static == other.mu_static
            and self.device_label == other.device_label
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in VECTOR_FIELDS)
        )

    def to_dict(self) -> dict:
        doc: dict = {"device_label": self.device_label, "mu_static": int(self.mu_static)}
        for name in VECTOR_FIELDS:
            vec = getattr(self, name)
            conv = int if name == "mem_out" else float
            doc[name] = {str(i): conv(v) for i, v in zip(self.node_ids, vec)}
        return doc

    def scaled(self, energy_factor: float) -> "CostProfile":
        return CostProfile(
            self.node_ids,
            self.phi_compute * energy_factor,
            self.phi_pagein * energy_factor,
            self.phi_pageout * energy_factor,
            self.psi_compute,
            self.psi_pagein,
            self.psi_pageout,
            self.mem_out,
            self.mu_static,
            self.device_label,
        )


def profile_from_dict(doc: dict) -> CostProfile:
    missing = [f for f in VECTOR_FIELDS if f not in doc]
    if missing:
        raise InvalidProfile(f"missing required field(s): {', '.join(missing)}")
    known = set(VECTOR_FIELDS) | {"mu_static", "device_label"}
    warnings = [f"ignored unknown field {k!r}" for k in sorted(doc) if k not in known]

    ids: tuple[int, ...] | None = None
    vectors = {}
    for name in VECTOR_FIELDS:
        raw = doc[name]
        if isinstance(raw, dict):
            keys = tuple(sorted(int(k) for k in raw))
            vals = [raw[str(k)] if str(k) in raw else raw[k] for k in keys]
        else:
            keys = tuple(range(1, len(raw) + 1))
            vals = list(raw)
        if ids is None:
            ids = keys
        elif keys != ids:
            raise InvalidProfile(f"field {name} covers different nodes than {VECTOR_FIELDS[0]}")
        try:
            arr = np.array([float(v) for v in vals], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise InvalidProfile(f"field {name}: {exc}") from None
        if not np.all(np.isfinite(arr)):
            raise InvalidProfile(f"field {name} has non-finite values")
        if np.any(arr < 0):
            raise InvalidProfile(f"field {name} has negative values")
        if name == "mem_out":
            if np.any(arr != np.round(arr)):
                raise InvalidProfile("mem_out must be whole bytes")
        vectors[name] = arr

    mu_static = doc.get("mu_static", 0)
    if not float(mu_static).is_integer() or mu_static < 0:
        raise InvalidProfile("mu_static must be a non-negative whole number of bytes")
    return CostProfile(
        ids or (),
        **vectors,
        mu_static=int(mu_static),
        device_label=str(doc.get("device_label", "")),
        warnings=warnings,
    )


def load_profile(document: str | Path | dict) -> CostProfile:
    """Parse a profile from a dict, JSON text, or a path to a JSON file."""
    if isinstance(document, dict):
        return profile_from_dict(document)
    text = str(document)
    if not text.lstrip().startswith("{"):
        text = Path(document).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidProfile(f"not a JSON document: {exc}") from None
    return profile_from_dict(doc)


def save_profile(p: CostProfile, path: str | Path | None = None) -> str:
    text = json.dumps(p.to_dict(), indent=1, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass(frozen=True, eq=False)
class CostedGraph:
    """A graph, its profile and the (RAM, deadline) budget.

    Vector properties are re-indexed by execution position.
    """

    graph: TrainingGraph
    profile: CostProfile
    mu_ram: float
    mu_deadline: float

    @cached_property
    def _perm(self) -> np.ndarray:
        idx = {nid: k for k, nid in enumerate(self.profile.node_ids)}
        return np.array([idx[nid] for nid in self.graph.order], dtype=np.int64)

    def _vec(self, name):
        return getattr(self.profile, name)[self._perm]

    @cached_property
    def phi_compute(self) -> np.ndarray:
        return self._vec("phi_compute")

    @cached_property
    def phi_pagein(self) -> np.ndarray:
        return self._vec("phi_pagein")

    @cached_property
    def phi_pageout(self) -> np.ndarray:
        return self._vec("phi_pageout")

    @cached_property
    def psi_compute(self) -> np.ndarray:
        return self._vec("psi_compute")

    @cached_property
    def psi_pagein(self) -> np.ndarray:
        return self._vec("psi_pagein")

    @cached_property
    def psi_pageout(self) -> np.ndarray:
        return self._vec("psi_pageout")

    @cached_property
    def mem_out(self) -> np.ndarray:
        return self._vec("mem_out")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def mu_static(self) -> int:
        return self.profile.mu_static

    def with_budget(self, mu_ram=None, mu_deadline=None) -> "CostedGraph":
        return attach(
            self.graph,
            self.profile,
            self.mu_ram if mu_ram is None else mu_ram,
            self.mu_deadline if mu_deadline is None else mu_deadline,
        )

    def energy_floor(self) -> Fraction:
        return sum((Fraction(float(x)) for x in self.phi_compute), Fraction(0))

    def naive_runtime(self) -> Fraction:
        return sum((Fraction(float(x)) for x in self.psi_compute), Fraction(0))

    def full_memory(self) -> int:
        return int(self.mu_static + int(self.mem_out.sum()))

    def memory_floor(self) -> int:
        """No schedule fits below this: every op's output must exist once."""
        return int(self.mu_static + int(self.mem_out.max()))


def attach(g: TrainingGraph, p: CostProfile, mu_ram=math.inf, mu_deadline=math.inf) -> CostedGraph:
    g.require_valid()
    have = set(p.node_ids)
    missing = [i for i in g.ids if i not in have]
    if missing:
        raise CoverageError(missing)
    if not mu_ram > p.mu_static:
        raise InfeasibleBudget(f"mu_ram={mu_ram} leaves no room above mu_static={p.mu_static}")
    if not mu_deadline > 0:
        raise InfeasibleBudget("mu_deadline must be positive")
    cg = CostedGraph(g, p, mu_ram, mu_deadline)
    consumed = {a for a, _ in g.edges}
    zero = [nid for nid, m in zip(g.order, cg.mem_out) if nid in consumed and m <= 0]
    if zero:
        raise InvalidProfile(f"mem_out must be positive for consumed nodes {zero}")
    return cg


def _round(x) -> np.ndarray:
    # six significant digits keeps profile files readable
    return np.array([float(f"{v:.6g}") for v in np.atleast_1d(x)])


# Per-kB costs by op class: (compute energy, page-in energy, page-out energy).
_MIXED = {
    "cheap": (0.05, 0.6, 0.6),
    "medium": (1.0, 0.45, 0.45),
    "heavy": (4.0, 0.3, 0.3),
}
_CPU_POWER_W = 0.5
_BUS_POWER_W = 0.3


def synth_profile(g: TrainingGraph, regime: str, seed: int = 0, mu_static: int = 0) -> CostProfile:
    """Deterministic synthetic profile for ``g``.

    Backward ops cost twice their forward layer; the loss is a small cheap op.
    Device regimes reuse the mixed profile and rescale compute time by the
    device clock.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    rng = np.random.default_rng(seed)
    n = g.n
    labels, tags = g.pos_labels, g.pos_tags
    is_bwd = np.array([lab.startswith("b") for lab in labels])
    is_loss = np.array([lab == "loss" for lab in labels])

    if regime == "uniform":
        kb = np.full(n, 1.0)
        phi_c = np.full(n, 1.0)
        phi_in = np.full(n, 0.5)
        phi_out = np.full(n, 0.5)
    else:
        kb = rng.integers(2, 5, size=n).astype(float)
        kb[is_loss] = 1.0
        jitter = rng.uniform(0.9, 1.1, size=(3, n))
        if regime == "conv-like":
            c = rng.uniform(2.0, 5.0, size=n)
            base = np.stack([c, np.full(n, 0.4), np.full(n, 0.4)])
        else:
            base = np.array([_MIXED[t] for t in tags]).T
        phi_c = base[0] * kb * jitter[0]
        phi_in = base[1] * kb * jitter[1]
        phi_out = base[2] * kb * jitter[2]
        phi_c = np.where(is_bwd, 2.0 * phi_c, phi_c)
        phi_c = np.where(is_loss, 0.05 * kb, phi_c)

    # energies in millijoule-scale joules
    phi_c, phi_in, phi_out = (_round(v * 1e-3) for v in (phi_c, phi_in, phi_out))
    psi_c = phi_c / _CPU_POWER_W
    psi_in = phi_in / _BUS_POWER_W
    psi_out = phi_out / _BUS_POWER_W
    label = regime
    if regime.startswith("device:"):
        clock = DEVICE_CLOCKS_HZ[regime.split(":", 1)[1]]
        psi_c = psi_c * (_REFERENCE_CLOCK_HZ / clock)
    ids = tuple(sorted(g.ids))
    at = np.array([g.position[i] for i in ids], dtype=np.int64)
    return CostProfile(
        ids,
        phi_c[at],
        phi_in[at],
        phi_out[at],
        _round(psi_c)[at],
        _round(psi_in)[at],
        _round(psi_out)[at],
        (kb * 1024).astype(np.int64)[at],
        mu_static=int(mu_static),
        device_label=label,
    )


# Per-op figures of the hand-built mixed instance: (output kB, forward compute
# mJ, page mJ each way). Cheap ops write large outputs that are costly to move;
# heavy ops are costly to recompute but page cheaply.
_EIGHT = {
    "cheap": (3, 0.2, 5.0),
    "medium": (1, 1.0, 0.5),
    "heavy": (3, 8.0, 0.3),
}
_EIGHT_LOSS = (1, 0.05, 0.05)


def mixed_eight_profile(g: TrainingGraph, mu_static: int = 0) -> CostProfile:
    """Fixed costs for graphs built from :func:`graph.mixed_eight_spec` (or any
    tagged chain). Backward ops cost twice the forward compute; both share the
    paging cost of their layer class.
    """
    kb, comp, page = [], [], []
    for lab, tag in zip(g.pos_labels, g.pos_tags):
        k, c, p = _EIGHT_LOSS if lab == "loss" else _EIGHT[tag]
        kb.append(k)
        comp.append(2 * c if lab.startswith("b") else c)
        page.append(p)
    phi_c = np.array(comp) * 1e-3
    phi_p = np.array(page) * 1e-3
    ids = tuple(sorted(g.ids))
    at = np.array([g.position[i] for i in ids], dtype=np.int64)
    return CostProfile(
        ids,
        phi_c[at],
        phi_p[at],
        phi_p[at],
        _round(phi_c / _CPU_POWER_W)[at],
        _round(phi_p / _BUS_POWER_W)[at],
        _round(phi_p / _BUS_POWER_W)[at],
        (np.array(kb) * 1024).astype(np.int64)[at],
        mu_static=int(mu_static),
        device_label="mixed-eight",
    )
