"""Upper estimates of the relaxed line tension psi_rel(b, t).

A competitor replaces the straight segment (-t/2, t/2) by lattice-valued pieces
b = sum_i m_i b_i, each routed from -t/2 to t/2 through the unit-diameter ball
on a graph.  Its cost is sum_i m_i * (path cost of b_i) with edge cost
psi(b_i, d) * length; the trivial competitor is the chord, so the estimate never
exceeds psi(b, t).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .elasticity import ElasticTensor, check_rotation
from .geometry import unit
from .linetension import psi_cached
from .network import BravaisLattice

MAX_CANDIDATES = 1_000_000


class BlowupError(RuntimeError):
    pass


@dataclass(frozen=True)
class Caps:
    norm: float = 2.0   # |b_i| <= norm (the trivial piece b is always allowed)
    count: int = 3      # sum_i m_i <= count

    def __post_init__(self):
        if self.norm <= 0 or self.count < 1:
            raise ValueError("caps must be positive")


@dataclass(frozen=True)
class Decomposition:
    parts: tuple  # ((integer coords, multiplicity), ...) sorted

    def vectors(self, lattice: BravaisLattice):
        return [(lattice.vector(z), m) for z, m in self.parts]

    @property
    def count(self) -> int:
        return sum(m for _, m in self.parts)

    def as_dict(self, lattice: BravaisLattice):
        return [{"b": lattice.vector(z).tolist(), "lattice": list(z), "m": m} for z, m in self.parts]


def _candidates(lattice: BravaisLattice, cap: float):
    Finv = np.linalg.inv(lattice.F)
    bound = int(np.ceil(cap * np.linalg.norm(Finv, 2))) + 1
    rng = range(-bound, bound + 1)
    out = []
    for z in product(rng, rng, rng):
        if z == (0, 0, 0):
            continue
        if np.linalg.norm(lattice.F @ np.array(z, dtype=float)) <= cap * (1 + 1e-12):
            out.append(z)
    return sorted(out)


def enumerate_decompositions(b, lattice: BravaisLattice, caps: Caps = Caps(),
                             limit: int = MAX_CANDIDATES) -> list[Decomposition]:
    """All multisets {b_i} of nonzero lattice vectors with sum b under the caps.

    The trivial decomposition {b} is always included.  Multisets are explored in
    nondecreasing candidate order, so permutations are never generated twice.
    """
    b = np.asarray(b, dtype=float)
    if not lattice.contains(b):
        raise ValueError(f"b = {b.tolist()} is not a lattice vector")
    zb = tuple(int(v) for v in np.rint(lattice.coords(b)))
    if zb == (0, 0, 0):
        return [Decomposition(())]
    cands = _candidates(lattice, caps.norm)
    index = {z: i for i, z in enumerate(cands)}
    found = {((zb, 1),)}
    visited = 0

    def rec(start, remaining, left, chosen):
        nonlocal visited
        visited += 1
        if visited > limit:
            raise BlowupError(f"more than {limit} partial decompositions; lower the caps")
        # close with a single last vector, if it is a candidate at or after start
        j = index.get(remaining)
        if j is not None and j >= start:
            found.add(_as_parts(chosen + [remaining]))
        if left <= 1:
            return
        for i in range(start, len(cands)):
            z = cands[i]
            rec(i, tuple(r - c for r, c in zip(remaining, z)), left - 1, chosen + [z])

    rec(0, zb, caps.count, [])
    return [Decomposition(p) for p in sorted(found)]


def _as_parts(vectors):
    counts = {}
    for z in vectors:
        counts[z] = counts.get(z, 0) + 1
    return tuple(sorted(counts.items()))


# ---------------------------------------------------------------------------
# Routing


@dataclass
class RoutingGraph:
    """Scaled cubic lattice inside B_{1/2} with a direction stencil, plus +-t/2.

    ``frame`` rotates the node lattice (positions Q^T x).  The endpoints connect to
    every node within ``attach`` so that halving the spacing refines the graph.
    """
    t: np.ndarray
    spacing: float = 0.125
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    attach: float = 0.25
    stencil: str = "26"

    def __post_init__(self):
        self.t = unit(self.t)
        self.frame = check_rotation(self.frame)
        m = int(np.floor(0.5 / self.spacing))
        g = np.arange(-m, m + 1)
        Z = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        X = Z * self.spacing
        inside = np.linalg.norm(X, axis=1) < 0.5 - 1e-12
        Z, X = Z[inside], X[inside] @ self.frame
        ends = np.array([-0.5 * self.t, 0.5 * self.t])
        self.nodes = np.vstack([ends, X])
        lookup = {tuple(z): i + 2 for i, z in enumerate(Z)}
        steps = [s for s in product((-1, 0, 1), repeat=3) if s > (0, 0, 0)]
        if self.stencil == "6":
            steps = [s for s in steps if sum(map(abs, s)) == 1]
        edges = [(0, 1)]  # the chord
        for z, i in lookup.items():
            for s in steps:
                j = lookup.get((z[0] + s[0], z[1] + s[1], z[2] + s[2]))
                if j is not None:
                    edges.append((i, j))
        for e in (0, 1):
            d = np.linalg.norm(self.nodes[2:] - self.nodes[e], axis=1)
            edges.extend((e, j + 2) for j in np.nonzero(d <= self.attach + 1e-12)[0])
        self.edges = np.array(edges)
        vec = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        self.lengths = np.linalg.norm(vec, axis=1)
        self.directions = vec / self.lengths[:, None]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class Route:
    cost: float
    path: list

    def as_dict(self, graph: RoutingGraph):
        return {"cost": self.cost, "points": graph.nodes[self.path].tolist()}


def edge_costs(graph: RoutingGraph, C: ElasticTensor, b, modes: int = 32) -> np.ndarray:
    return np.array([psi_cached(C, b, d, modes) for d in graph.directions]) * graph.lengths


def shortest_route(graph: RoutingGraph, b, C: ElasticTensor, modes: int = 32) -> Route:
    """Dijkstra from -t/2 to t/2 with edge cost psi(b, d) * length."""
    if not np.any(b):
        return Route(0.0, [0, 1])
    w = edge_costs(graph, C, b, modes)
    # strictly positive weights keep zero-cost edges in the sparse structure
    w = np.maximum(w, 1e-300)
    n = graph.n_nodes
    A = sp.coo_matrix((w, (graph.edges[:, 0], graph.edges[:, 1])), shape=(n, n)).tocsr()
    dist, pred = dijkstra(A, directed=False, indices=0, return_predecessors=True)
    if not np.isfinite(dist[1]):
        raise RuntimeError("the routing graph does not connect the endpoints")
    path = [1]
    while path[-1] != 0:
        path.append(int(pred[path[-1]]))
    return Route(float(dist[1]), path[::-1])


@dataclass
class RelaxedEstimate:
    value: float
    psi: float
    decomposition: Decomposition
    routes: dict
    certificates: list

    def as_dict(self, lattice: BravaisLattice, graph: RoutingGraph):
        return {"psi": self.psi, "psi_rel_upper": self.value,
                "best_decomposition": self.decomposition.as_dict(lattice),
                "paths": {str(list(z)): r.as_dict(graph) for z, r in self.routes.items()},
                "candidates": len(self.certificates)}


def psi_rel_upper(C: ElasticTensor, b, t, lattice: BravaisLattice, caps: Caps = Caps(),
                  spacing: float = 0.125, graph: RoutingGraph | None = None,
                  modes: int = 32) -> RelaxedEstimate:
    """min over decompositions of sum_i m_i * shortest route cost of b_i."""
    t = unit(t)
    b = np.asarray(b, dtype=float)
    graph = RoutingGraph(t, spacing) if graph is None else graph
    if np.abs(graph.t - t).max() > 1e-12:
        raise ValueError("graph was built for a different direction")
    decs = enumerate_decompositions(b, lattice, caps)
    base = psi_cached(C, b, t, modes) if np.any(b) else 0.0
    routes = {}
    best, best_dec, certs = np.inf, None, []
    for dec in decs:
        total = 0.0
        for z, m in dec.parts:
            if z not in routes:
                routes[z] = shortest_route(graph, lattice.vector(z), C, modes)
            total += m * routes[z].cost
        certs.append((dec, total))
        if total < best:
            best, best_dec = total, dec
    if not decs[0].parts:
        best, best_dec = 0.0, decs[0]
    used = {z: routes[z] for z, _ in best_dec.parts}
    return RelaxedEstimate(float(best), float(base), best_dec, used, certs)
