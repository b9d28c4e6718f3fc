"""Cube adjacency graphs, greedy colouring in decreasing-degree order, and colouring certificates."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .bounds import degree_cap

ALPHA_SEARCH_LIMIT = 2000


@dataclass(frozen=True)
class CubeGraph:
    adjacency: tuple[frozenset, ...]

    @classmethod
    def from_edges(cls, count: int, edges) -> "CubeGraph":
        adj = [set() for _ in range(count)]
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError("self-loops are not allowed")
            adj[a].add(b)
            adj[b].add(a)
        return cls(tuple(frozenset(s) for s in adj))

    def __len__(self):
        return len(self.adjacency)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=int)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if len(self) else 0

    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(len(self)) for b in sorted(self.adjacency[a]) if a < b]

    def adjacent(self, a: int, b: int) -> bool:
        return b in self.adjacency[a]

    def to_json(self) -> dict:
        return {"vertices": len(self), "edges": [list(e) for e in self.edges()]}


@dataclass(frozen=True)
class Coloring:
    colors: tuple[int, ...]

    @property
    def class_count(self) -> int:
        return max(self.colors) + 1 if self.colors else 0

    def classes(self) -> list[list[int]]:
        out = [[] for _ in range(self.class_count)]
        for v, c in enumerate(self.colors):
            out[c].append(v)
        return out

    def is_proper(self, graph: CubeGraph) -> bool:
        return all(self.colors[a] != self.colors[b] for a, b in graph.edges())

    def to_json(self, graph: CubeGraph | None = None) -> dict:
        doc = {"colors": list(self.colors)}
        if graph is not None:
            doc["edges"] = [list(e) for e in graph.edges()]
        return doc


def adjacency_graph(partition) -> CubeGraph:
    """Edge iff the closed cubes meet."""
    return CubeGraph(tuple(frozenset(int(x) for x in nb) for nb in partition.neighbors))


def pairwise_adjacency_graph(partition) -> CubeGraph:
    """Quadratic all-pairs version of :func:`adjacency_graph`, kept as an independent cross-check."""
    from .whitney import closures_intersect

    cubes = partition.cubes
    edges = [(i, j) for i in range(len(cubes)) for j in range(i + 1, len(cubes)) if closures_intersect(cubes[i], cubes[j])]
    return CubeGraph.from_edges(len(cubes), edges)


def degree_order(graph: CubeGraph) -> list[int]:
    """Vertices by decreasing degree, ties by ascending id."""
    deg = graph.degrees
    return sorted(range(len(graph)), key=lambda v: (-deg[v], v))


def welsh_powell_color(graph: CubeGraph) -> Coloring:
    """Sweep the degree order repeatedly, each pass collecting a maximal independent set greedily."""
    order = degree_order(graph)
    colors = [-1] * len(graph)
    remaining = order
    color = 0
    while remaining:
        members: list[int] = []
        blocked: set[int] = set()
        rest = []
        for v in remaining:
            if v in blocked:
                rest.append(v)
                continue
            colors[v] = color
            members.append(v)
            blocked |= graph.adjacency[v]
        remaining = rest
        color += 1
    return Coloring(tuple(colors))


def welsh_powell_bound(graph: CubeGraph) -> int:
    deg = graph.degrees
    order = degree_order(graph)
    return max((min(int(deg[v]) + 1, i + 1) for i, v in enumerate(order)), default=0)


def degree_certificate(graph: CubeGraph, n: int) -> bool:
    return graph.max_degree <= degree_cap(n)


@dataclass(frozen=True)
class AlphaWitness:
    v: int
    ws: tuple[int, ...]
    zs: dict

    def to_json(self) -> dict:
        return {"v": self.v, "w": list(self.ws), "z": {f"{i},{j}": z for (i, j), z in self.zs.items()}}


def _z_for(graph: CubeGraph, deg, wi: int, wj: int, excluded: set) -> int | None:
    for z in sorted(graph.adjacency[wj]):
        if z in excluded or deg[z] < deg[wj] or graph.adjacent(wi, z):
            continue
        return z
    return None


def alpha_s_structure_present(graph: CubeGraph, s: int) -> AlphaWitness | None:
    """Search for a vertex v with neighbours w_1..w_s, each at least as high in degree, such that
    every non-adjacent ordered pair (w_i, w_j), i < j, is bridged by some z outside {v, w}
    with deg z >= deg w_j, z adjacent to w_j and not to w_i.

    For a fixed member set the excluded vertices are fixed, so each pair either admits
    a direction or not, and a valid order exists iff the forced directions are acyclic.
    """
    if s < 1:
        raise ValueError("s must be at least 1")
    if len(graph) > ALPHA_SEARCH_LIMIT:
        raise ValueError(f"structure search is limited to {ALPHA_SEARCH_LIMIT} vertices")
    deg = graph.degrees
    for v in range(len(graph)):
        cands = sorted(w for w in graph.adjacency[v] if deg[w] >= deg[v])
        if len(cands) < s:
            continue
        for members in combinations(cands, s):
            found = _order_members(graph, deg, v, members)
            if found is not None:
                return found
    return None


def _order_members(graph, deg, v, members) -> AlphaWitness | None:
    excluded = {v, *members}
    bridge = {}
    before = {w: set() for w in members}  # before[b] holds vertices forced to precede b
    for a, b in combinations(members, 2):
        if graph.adjacent(a, b):
            continue
        ab = _z_for(graph, deg, a, b, excluded)
        ba = _z_for(graph, deg, b, a, excluded)
        if ab is None and ba is None:
            return None
        if ab is not None:
            bridge[(a, b)] = ab
        if ba is not None:
            bridge[(b, a)] = ba
        if ba is None:
            before[b].add(a)
        elif ab is None:
            before[a].add(b)
    order: list[int] = []
    placed: set[int] = set()
    while len(order) < len(members):
        ready = [w for w in members if w not in placed and before[w] <= placed]
        if not ready:
            return None
        order.append(ready[0])
        placed.add(ready[0])
    zs = {}
    for i, j in combinations(range(len(order)), 2):
        if not graph.adjacent(order[i], order[j]):
            zs[(i, j)] = bridge[(order[i], order[j])]
    return AlphaWitness(v, tuple(order), zs)


def chromatic_number(graph: CubeGraph) -> int:
    """Exact chromatic number by branch and bound; intended for small graphs."""
    count = len(graph)
    if count == 0:
        return 0
    if count > 16:
        raise ValueError("exact colouring is limited to 16 vertices")
    order = degree_order(graph)
    best = welsh_powell_color(graph).class_count
    colors = [-1] * count

    def search(pos: int, used: int) -> None:
        nonlocal best
        if used >= best:
            return
        if pos == count:
            best = used
            return
        v = order[pos]
        taken = {colors[u] for u in graph.adjacency[v] if colors[u] >= 0}
        for c in range(min(used + 1, best - 1)):
            if c in taken:
                continue
            colors[v] = c
            search(pos + 1, max(used, c + 1))
            colors[v] = -1

    search(0, 0)
    return best


def random_graph(rng: np.random.Generator, count: int, density: float) -> CubeGraph:
    edges = [(i, j) for i in range(count) for j in range(i + 1, count) if rng.random() < density]
    return CubeGraph.from_edges(count, edges)
