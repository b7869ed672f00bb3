"""
Neighbourhood sets for temporal, seasonal, periodic, spatial and
spatio-temporal dependence.

Units are indexed ``0 .. m-1`` in Python; files (CSV adjacency, JSON
graphs) use 1-based labels.  Every neighbourhood contains its own unit.
Indices that would fall before the first unit are dropped rather than
wrapped around.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "NeighborhoodGraph",
    "AdjacencyList",
    "PeriodicSpec",
    "Violation",
    "temporal_graph",
    "seasonal_graph",
    "periodic_graph",
    "spatial_graph",
    "spatiotemporal_graph",
    "validate",
    "interaction_colouring",
]


@dataclass(frozen=True)
class NeighborhoodGraph:
    """
    ``m`` units and, for each unit ``i``, the sorted set of units feeding it.

    No validation happens on construction; see :func:`validate`.
    """

    m: int
    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(
            self, "neighbors", tuple(tuple(int(j) for j in nb) for nb in self.neighbors)
        )

    def __len__(self) -> int:
        return self.m

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.neighbors[i]

    def membership(self) -> np.ndarray:
        """Dense ``(m, m)`` 0/1 matrix ``A`` with ``A[i, j] = 1`` iff ``j`` in the set of ``i``."""
        a = np.zeros((self.m, self.m))
        for i, nb in enumerate(self.neighbors):
            a[i, list(nb)] = 1.0
        return a

    def children(self) -> tuple[tuple[int, ...], ...]:
        """For each unit ``j``, the units ``i`` whose set contains ``j``."""
        out: list[list[int]] = [[] for _ in range(self.m)]
        for i, nb in enumerate(self.neighbors):
            for j in nb:
                out[j].append(i)
        return tuple(tuple(c) for c in out)

    def to_dict(self) -> dict:
        return {"m": self.m, "neighbors": [[j + 1 for j in nb] for nb in self.neighbors]}

    @classmethod
    def from_dict(cls, data: dict) -> "NeighborhoodGraph":
        nbs = [sorted(int(j) - 1 for j in nb) for nb in data["neighbors"]]
        m = int(data.get("m", len(nbs)))
        return cls(m, tuple(tuple(nb) for nb in nbs))


@dataclass(frozen=True)
class AdjacencyList:
    """Undirected edges between ``m`` units, each pair stored once."""

    m: int
    edges: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        seen = set()
        clean = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at unit {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={self.m}")
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                clean.append(key)
        object.__setattr__(self, "edges", tuple(clean))

    def neighbors_of(self, i: int) -> list[int]:
        return sorted([b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i])

    def permuted(self, perm: Sequence[int]) -> "AdjacencyList":
        """Relabel unit ``k`` as ``perm[k]``."""
        return AdjacencyList(self.m, tuple((perm[i], perm[j]) for i, j in self.edges))


@dataclass(frozen=True)
class PeriodicSpec:
    """Season length and one lag order per position in the season."""

    season: int
    orders: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(int(q) for q in self.orders))
        if self.season < 1:
            raise ValueError("season length must be positive")
        if len(self.orders) != self.season:
            raise ValueError(f"need {self.season} orders, got {len(self.orders)}")
        if any(q < 0 for q in self.orders):
            raise ValueError("orders must be nonnegative")


def _from_sets(m: int, sets: Iterable[Iterable[int]]) -> NeighborhoodGraph:
    return NeighborhoodGraph(m, tuple(tuple(sorted(set(s))) for s in sets))


def temporal_graph(m: int, q: int) -> NeighborhoodGraph:
    """Moving-average type sets ``{i-q, ..., i}``."""
    if m < 1 or q < 0:
        raise ValueError("need m >= 1 and q >= 0")
    return _from_sets(m, (range(max(0, i - q), i + 1) for i in range(m)))


def seasonal_graph(m: int, q: int, season: int) -> NeighborhoodGraph:
    """Sets ``{i - k*season : k = 0..q}``, i.e. lags at whole seasons."""
    if m < 1 or q < 0 or season < 1:
        raise ValueError("need m >= 1, q >= 0 and season >= 1")
    return _from_sets(m, ([i - k * season for k in range(q + 1) if i - k * season >= 0] for i in range(m)))


def periodic_graph(m: int, spec: PeriodicSpec) -> NeighborhoodGraph:
    """Sets ``{i - q_p, ..., i}`` where ``p`` is the position of ``i`` within its season."""
    if m < 1:
        raise ValueError("need m >= 1")
    return _from_sets(
        m, (range(max(0, i - spec.orders[i % spec.season]), i + 1) for i in range(m))
    )


def spatial_graph(adj: AdjacencyList) -> NeighborhoodGraph:
    sets = [{i} for i in range(adj.m)]
    for i, j in adj.edges:
        sets[i].add(j)
        sets[j].add(i)
    return _from_sets(adj.m, sets)


def spatiotemporal_graph(adj: AdjacencyList, periods: int, q: int) -> NeighborhoodGraph:
    """
    Location ``i`` at time ``t`` depends on itself over ``t-q .. t`` and on
    its spatial neighbours at time ``t``.

    Units are time-major: ``(i, t)`` maps to ``t * adj.m + i``.
    """
    if periods < 1 or q < 0:
        raise ValueError("need periods >= 1 and q >= 0")
    loc = adj.m
    space = spatial_graph(adj)
    sets = []
    for t in range(periods):
        for i in range(loc):
            own = {s * loc + i for s in range(max(0, t - q), t + 1)}
            own.update(t * loc + j for j in space[i])
            sets.append(own)
    return _from_sets(loc * periods, sets)


class Violation(NamedTuple):
    kind: str  # "self-membership" | "out-of-range" | "duplicate" | "size"
    unit: int
    detail: str


def validate(graph: NeighborhoodGraph) -> list[Violation]:
    """Return every broken invariant; an empty list means the graph is valid."""
    out: list[Violation] = []
    if len(graph.neighbors) != graph.m:
        out.append(Violation("size", -1, f"{len(graph.neighbors)} sets for m={graph.m}"))
    for i, nb in enumerate(graph.neighbors):
        if i not in nb:
            out.append(Violation("self-membership", i, f"unit {i} missing from its own set"))
        bad = [j for j in nb if not 0 <= j < graph.m]
        if bad:
            out.append(Violation("out-of-range", i, f"indices {bad} outside 0..{graph.m - 1}"))
        if len(set(nb)) != len(nb):
            out.append(Violation("duplicate", i, "repeated indices"))
    return out


def interaction_colouring(graph: NeighborhoodGraph) -> list[np.ndarray]:
    """
    Partition units so that no two units in a class appear together in any
    neighbourhood set.  Units within a class are conditionally independent
    in the latent full conditionals, so each class can be updated at once.
    """
    conflicts: list[set[int]] = [set() for _ in range(graph.m)]
    for nb in graph.neighbors:
        for j in nb:
            conflicts[j].update(nb)
    colour = np.full(graph.m, -1)
    for j in range(graph.m):
        taken = {colour[k] for k in conflicts[j] if colour[k] >= 0}
        c = 0
        while c in taken:
            c += 1
        colour[j] = c
    return [np.flatnonzero(colour == c) for c in range(colour.max() + 1)]
