"""Per-phase capacitor-only views of a switched circuit and the capacitances
and divider ratios read off them.

Shorts are handled topologically (union-find), so an infinite capacitance is
never the result of a numeric threshold.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import SenseNodeIsolated, SingularNetwork
from .netlist import Capacitor, Circuit, Ota, Resistor, Switch


class ViewKind(enum.Enum):
    C_INF = "c_inf"              # every switch, resistor and OTA removed
    C_INF_PRIME = "c_inf_prime"  # closed switches/resistors shorted, OTAs removed
    C_ZERO = "c_zero"            # as C_INF_PRIME, plus each OTA output shorted to ground
    FEEDBACK = "feedback"        # same topology as C_INF_PRIME


@dataclass(frozen=True)
class ExtendedCapacitance:
    """A capacitance on [0, +inf]; ``math.inf`` is the explicit infinity."""

    farads: float

    def __post_init__(self):
        if math.isnan(self.farads) or self.farads < 0:
            raise ValueError(f"capacitance must be >= 0, got {self.farads!r}")

    @classmethod
    def infinite(cls) -> "ExtendedCapacitance":
        return cls(math.inf)

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.farads)

    def reciprocal(self) -> float:
        """1/C with 1/inf == 0 exactly (and 1/0 == inf)."""
        if self.is_infinite:
            return 0.0
        if self.farads == 0.0:
            return math.inf
        return 1.0 / self.farads

    def __str__(self) -> str:
        return "inf" if self.is_infinite else f"{self.farads:.9g}"


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the lexically smallest node as representative: deterministic group names
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass(frozen=True)
class PhaseView:
    phase: int
    kind: ViewKind
    group_of: dict            # node -> group name (the group's smallest node id)
    capacitors: tuple         # (group1, group2, farads), no self-loops
    ground: str               # ground group

    @property
    def groups(self) -> list[str]:
        return sorted(set(self.group_of.values()))

    def group(self, node: str) -> str:
        try:
            return self.group_of[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def components(self) -> list[set[str]]:
        """Connected components of the capacitor graph over merged groups."""
        uf = _UnionFind(self.groups)
        for a, b, _ in self.capacitors:
            uf.union(a, b)
        comps: dict[str, set[str]] = {}
        for g in self.groups:
            comps.setdefault(uf.find(g), set()).add(g)
        return list(comps.values())

    def laplacian(self, groups: list[str]) -> np.ndarray:
        """Capacitance Laplacian restricted to ``groups`` (rows/cols in that order)."""
        index = {g: i for i, g in enumerate(groups)}
        lap = np.zeros((len(groups), len(groups)))
        for a, b, c in self.capacitors:
            if a in index and b in index:
                i, j = index[a], index[b]
                lap[i, i] += c
                lap[j, j] += c
                lap[i, j] -= c
                lap[j, i] -= c
        return lap


def build_view(circuit: Circuit, phase: int, kind: ViewKind) -> PhaseView:
    if not 1 <= phase <= circuit.n_phases:
        raise ValueError(f"phase {phase} outside 1..{circuit.n_phases}")
    uf = _UnionFind(sorted(circuit.nodes))
    if kind is not ViewKind.C_INF:
        for el in circuit.elements:
            if isinstance(el, Resistor) or (isinstance(el, Switch) and el.is_closed(phase)):
                uf.union(el.n1, el.n2)
    if kind is ViewKind.C_ZERO:
        for ota in circuit.of_kind(Ota):
            uf.union(ota.out, circuit.ground)
    group_of = {n: uf.find(n) for n in circuit.nodes}
    caps = []
    for cap in circuit.of_kind(Capacitor):
        a, b = group_of[cap.n1], group_of[cap.n2]
        if a != b:
            caps.append((a, b, cap.value))
    return PhaseView(phase, kind, group_of, tuple(caps), group_of[circuit.ground])


def _solve_fixed(view: PhaseView, members: set[str], fixed: dict[str, float]) -> dict[str, float]:
    """Potentials of ``members`` with ``fixed`` groups held and every other
    group at zero net charge. ``members`` must be one capacitive component."""
    order = sorted(members)
    lap = view.laplacian(order)
    free = [i for i, g in enumerate(order) if g not in fixed]
    held = [i for i, g in enumerate(order) if g in fixed]
    v = np.zeros(len(order))
    for i in held:
        v[i] = fixed[order[i]]
    if free:
        a = lap[np.ix_(free, free)]
        rhs = -lap[np.ix_(free, held)] @ v[held]
        try:
            v[free] = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError:
            raise SingularNetwork("floating block left after pruning") from None
    return {g: v[i] for i, g in enumerate(order)}


def equivalent_capacitance(view: PhaseView, k: str, l: str) -> ExtendedCapacitance:
    """Two-terminal capacitance between nodes ``k`` and ``l``.

    Unit voltage is applied across the port and every other group (ground
    included) floats at zero net charge; the charge drawn by ``k`` is the
    capacitance. A port with no capacitive path between its terminals has 0 F.
    """
    if k == l:
        raise ValueError("port terminals must differ")
    gk, gl = view.group(k), view.group(l)
    if gk == gl:
        return ExtendedCapacitance.infinite()
    comp = next(c for c in view.components() if gk in c)
    if gl not in comp:
        return ExtendedCapacitance(0.0)
    pot = _solve_fixed(view, comp, {gk: 1.0, gl: 0.0})
    charge = sum(c * (pot[a] - pot[b]) if a == gk else c * (pot[b] - pot[a])
                 for a, b, c in view.capacitors if gk in (a, b))
    return ExtendedCapacitance(max(float(charge), 0.0))


def divider_gain(view: PhaseView, driven: str, sensed_p: str, sensed_n: str) -> float:
    """V(sensed_p) - V(sensed_n) with ``driven`` at 1 V and ground at 0 V."""
    gd = view.group(driven)
    if gd == view.ground:
        raise SingularNetwork(f"driven node {driven!r} is merged with ground")
    fixed = {gd: 1.0, view.ground: 0.0}
    pot: dict[str, float] = dict(fixed)
    for comp in view.components():
        if comp & fixed.keys():
            pot.update(_solve_fixed(view, comp, {g: v for g, v in fixed.items() if g in comp}))
    out = []
    for node in (sensed_p, sensed_n):
        g = view.group(node)
        if g not in pot:
            raise SenseNodeIsolated(f"node {node!r} has no capacitive path to {driven!r} or ground")
        out.append(pot[g])
    return float(out[0] - out[1])
