"""Polyhedral dislocation currents mu = theta (x) tau H^1 on segments.

A current stores node coordinates, directed edges (tau points from the first to
the second node), one Burgers vector per edge and a scale ``eps``: the measure
is ``eps * theta (x) tau`` on each segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import Box


@dataclass(frozen=True)
class BravaisLattice:
    F: np.ndarray
    tol: float = 1e-8

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if F.shape != (3, 3) or abs(np.linalg.det(F)) <= 1e-14:
            raise ValueError("lattice generator must be an invertible 3x3 matrix")
        object.__setattr__(self, "F", F)

    @classmethod
    def cubic(cls, a: float = 1.0):
        return cls(a * np.eye(3))

    def coords(self, v):
        return np.linalg.solve(self.F, np.asarray(v, dtype=float).T).T

    def contains(self, v) -> bool:
        c = self.coords(v)
        return bool(np.all(np.abs(c - np.round(c)) <= self.tol))

    def vector(self, n):
        return self.F @ np.asarray(n, dtype=float)


class PolyhedralCurrent:
    """Immutable polyhedral current."""

    def __init__(self, nodes, edges, theta, eps: float = 1.0, lattice: BravaisLattice | None = None):
        nodes = np.array(nodes, dtype=float).reshape(-1, 3)
        edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        theta = np.array(theta, dtype=float).reshape(-1, 3)
        if len(edges) != len(theta):
            raise ValueError("one Burgers vector per segment is required")
        if len(edges) and (edges.min() < 0 or edges.max() >= len(nodes)):
            raise ValueError("segment refers to a missing node")
        lengths = np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1) if len(edges) else np.zeros(0)
        if np.any(lengths <= 0):
            raise ValueError("segments must have positive length")
        for a in (nodes, edges, theta):
            a.setflags(write=False)
        self.nodes, self.edges, self.theta = nodes, edges, theta
        self.eps = float(eps)
        self.lattice = lattice

    @classmethod
    def from_segments(cls, segments, thetas, eps: float = 1.0, lattice=None, tol: float = 1e-12):
        """Build from a list of (a, b) point pairs, merging coincident endpoints."""
        nodes = []
        edges = []

        def index(p):
            for i, q in enumerate(nodes):
                if np.linalg.norm(q - p) <= tol:
                    return i
            nodes.append(np.asarray(p, dtype=float))
            return len(nodes) - 1

        for a, b in segments:
            edges.append((index(np.asarray(a, dtype=float)), index(np.asarray(b, dtype=float))))
        return cls(np.array(nodes).reshape(-1, 3), edges, thetas, eps, lattice)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 3)))

    def __len__(self):
        return len(self.edges)

    @property
    def starts(self):
        return self.nodes[self.edges[:, 0]]

    @property
    def ends(self):
        return self.nodes[self.edges[:, 1]]

    @property
    def lengths(self):
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @property
    def tau(self):
        return (self.ends - self.starts) / self.lengths[:, None]

    @property
    def midpoints(self):
        return 0.5 * (self.starts + self.ends)

    def endpoints(self):
        return list(zip(self.starts, self.ends))

    def scaled(self, eps: float):
        return PolyhedralCurrent(self.nodes, self.edges, self.theta, eps, self.lattice)

    def with_theta(self, theta):
        return PolyhedralCurrent(self.nodes, self.edges, theta, self.eps, self.lattice)

    def translated(self, v):
        return PolyhedralCurrent(self.nodes + np.asarray(v, dtype=float), self.edges, self.theta,
                                 self.eps, self.lattice)

    def normalized(self):
        """Canonical form: each segment oriented so its start is lexicographically
        smaller than its end (theta negated on reversal), segments sorted."""
        segs = []
        for (a, b), th in zip(self.endpoints(), self.theta):
            if tuple(b) < tuple(a):
                a, b, th = b, a, -th
            segs.append((tuple(a), tuple(b), tuple(th)))
        segs.sort()
        return PolyhedralCurrent.from_segments([(s[0], s[1]) for s in segs],
                                               [s[2] for s in segs], self.eps, self.lattice)

    def same_measure(self, other, tol: float = 1e-12) -> bool:
        a, b = self.normalized(), other.normalized()
        if len(a) != len(b):
            return False
        return (np.allclose(a.starts, b.starts, atol=tol) and np.allclose(a.ends, b.ends, atol=tol)
                and np.allclose(a.eps * a.theta, b.eps * b.theta, atol=tol))


# ---------------------------------------------------------------------------
# JSON


def current_to_dict(current: PolyhedralCurrent) -> dict:
    doc = {"nodes": current.nodes.tolist(), "eps": current.eps}
    segs = []
    if current.lattice is not None:
        doc["lattice"] = current.lattice.F.tolist()
        coords = current.lattice.coords(current.theta) if len(current) else np.zeros((0, 3))
        for (a, b), n in zip(current.edges, coords):
            segs.append({"a": int(a), "b": int(b), "theta_lattice": [int(round(x)) for x in n]})
    else:
        for (a, b), th in zip(current.edges, current.theta):
            segs.append({"a": int(a), "b": int(b), "theta": th.tolist()})
    doc["segments"] = segs
    return doc


def current_from_dict(doc: dict) -> PolyhedralCurrent:
    unknown = set(doc) - {"lattice", "nodes", "segments", "eps"}
    if unknown:
        raise ValueError(f"unknown current keys: {sorted(unknown)}")
    lattice = BravaisLattice(doc["lattice"]) if doc.get("lattice") is not None else None
    edges, thetas = [], []
    for s in doc["segments"]:
        edges.append((s["a"], s["b"]))
        if "theta_lattice" in s:
            if lattice is None:
                raise ValueError("theta_lattice given without a lattice")
            thetas.append(lattice.vector(s["theta_lattice"]))
        else:
            thetas.append(s["theta"])
    nodes = np.asarray(doc["nodes"], dtype=float).reshape(-1, 3)
    return PolyhedralCurrent(nodes, np.array(edges, dtype=np.int64).reshape(-1, 2),
                             np.array(thetas, dtype=float).reshape(-1, 3),
                             float(doc.get("eps", 1.0)), lattice)


# ---------------------------------------------------------------------------
# Checks


@dataclass
class Report:
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"passed": self.passed, **self.details}


def node_flux(current: PolyhedralCurrent) -> np.ndarray:
    """Outgoing minus incoming Burgers vector at every node."""
    flux = np.zeros((len(current.nodes), 3))
    np.add.at(flux, current.edges[:, 0], current.theta)
    np.subtract.at(flux, current.edges[:, 1], current.theta)
    return flux


def _periodic_merge(current, box: Box, tol):
    # identify nodes that coincide modulo the box period
    wrapped = box.lo + np.mod(current.nodes - box.lo, box.sides)
    wrapped = np.where(np.abs(wrapped - box.hi) <= tol, box.lo, wrapped)
    wrapped = np.where(np.abs(wrapped - box.lo) <= tol, box.lo, wrapped)
    labels = -np.ones(len(wrapped), dtype=np.int64)
    reps = []
    for i, p in enumerate(wrapped):
        for j, q in enumerate(reps):
            if np.linalg.norm(p - q) <= tol:
                labels[i] = j
                break
        else:
            labels[i] = len(reps)
            reps.append(p)
    return labels, np.array(reps)


def check_divergence_free(current: PolyhedralCurrent, box: Box | None = None,
                          periodic: bool = False, tol: float = 1e-10) -> Report:
    """Kirchhoff balance at every node interior to ``box``.

    Boundary nodes are exempt unless ``periodic``, in which case nodes are first
    identified modulo the box period and every merged node must balance.
    """
    flux = node_flux(current)
    if periodic:
        if box is None:
            raise ValueError("periodic balance needs a box")
        labels, reps = _periodic_merge(current, box, 1e-9)
        merged = np.zeros((len(reps), 3))
        np.add.at(merged, labels, flux)
        bad = [{"point": reps[i].tolist(), "imbalance": merged[i].tolist()}
               for i in range(len(reps)) if np.abs(merged[i]).max() > tol]
        return Report(not bad, {"violations": bad})
    bad = []
    for i, f in enumerate(flux):
        if np.abs(f).max() <= tol:
            continue
        if box is not None and (box.on_boundary(current.nodes[i]) or not box.contains(current.nodes[i])):
            continue
        bad.append({"node": i, "point": current.nodes[i].tolist(), "imbalance": f.tolist()})
    return Report(not bad, {"violations": bad})


def check_lattice(current: PolyhedralCurrent, lattice: BravaisLattice, tol: float = 1e-8) -> Report:
    fails, null = [], []
    for i, th in enumerate(current.theta):
        c = lattice.coords(th)
        if np.abs(c - np.round(c)).max() > tol:
            fails.append({"segment": i, "coords": c.tolist()})
        elif np.all(np.round(c) == 0):
            null.append(i)
    return Report(not fails, {"failures": fails, "null_segments": null})


def segment_distance(p1, q1, p2, q2) -> float:
    """Exact Euclidean distance between closed segments [p1, q1] and [p2, q2]."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    # parallel segments: any s works, start from 0
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-14 * a * e else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
    elif t > 1.0:
        t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + s * d1 - (p2 + t * d2)))


def point_segment_distance(x, a, b):
    """Distance from points x (..., 3) to the segment [a, b]."""
    x = np.asarray(x, dtype=float)
    d = b - a
    s = np.clip(((x - a) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(x - (a + s[..., None] * d), axis=-1)


def check_dilute(current: PolyhedralCurrent, h: float, alpha: float, omega: Box,
                 tol: float = 1e-12) -> Report:
    """(h, alpha)-diluteness: lengths >= h, separation >= alpha h for disjoint
    segments, angle >= alpha at shared endpoints, no curve endpoints inside omega."""
    if h <= 0 or alpha <= 0:
        raise ValueError("h and alpha must be positive")
    out = {"length": [], "separation": [], "angle": [], "endpoints": [], "outside": []}
    lengths = current.lengths
    for i, L in enumerate(lengths):
        if L < h * (1 - 1e-12):
            out["length"].append({"segment": i, "length": float(L)})
    for i in range(len(current)):
        if not (omega.contains(current.starts[i], 1e-10) and omega.contains(current.ends[i], 1e-10)):
            out["outside"].append(i)
    for i, j in combinations(range(len(current)), 2):
        shared = set(current.edges[i]) & set(current.edges[j])
        if shared:
            n = shared.pop()
            ri = current.nodes[current.edges[i][1 if current.edges[i][0] == n else 0]] - current.nodes[n]
            rj = current.nodes[current.edges[j][1 if current.edges[j][0] == n else 0]] - current.nodes[n]
            ang = float(np.arccos(np.clip(ri @ rj / (np.linalg.norm(ri) * np.linalg.norm(rj)), -1, 1)))
            if ang < alpha * (1 - 1e-12):
                out["angle"].append({"segments": [i, j], "angle": ang})
            continue
        dist = segment_distance(current.starts[i], current.ends[i], current.starts[j], current.ends[j])
        if dist < alpha * h * (1 - 1e-12) - tol:
            out["separation"].append({"segments": [i, j], "distance": dist})
    degree = np.bincount(current.edges.ravel(), minlength=len(current.nodes))
    for n in np.flatnonzero(degree == 1):
        p = current.nodes[n]
        if omega.contains(p) and not omega.on_boundary(p):
            out["endpoints"].append({"node": int(n), "point": p.tolist()})
    conditions = {
        "lengths": not out["length"],
        "separation": not out["separation"],
        "angles": not out["angle"],
        "no_interior_endpoints": not out["endpoints"],
        "inside_closure": not out["outside"],
    }
    return Report(all(conditions.values()), {"conditions": conditions, "witnesses": out})


def clip_segment(a, b, box: Box):
    """Parameter interval [u0, u1] of the part of a + u (b - a) inside the box, or None."""
    d = b - a
    u0, u1 = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-300:
            if a[k] < box.lo[k] or a[k] > box.hi[k]:
                return None
            continue
        lo = (box.lo[k] - a[k]) / d[k]
        hi = (box.hi[k] - a[k]) / d[k]
        if lo > hi:
            lo, hi = hi, lo
        u0, u1 = max(u0, lo), min(u1, hi)
        if u0 > u1:
            return None
    return u0, u1


def total_variation(current: PolyhedralCurrent, omega: Box | None = None) -> float:
    """|mu|(omega) = eps * sum |theta_i| length(gamma_i within omega)."""
    total = 0.0
    for (a, b), th, L in zip(current.endpoints(), current.theta, current.lengths):
        if omega is None:
            frac = 1.0
        else:
            span = clip_segment(a, b, omega)
            frac = 0.0 if span is None else span[1] - span[0]
        total += np.linalg.norm(th) * L * frac
    return current.eps * total


def subdivide(current: PolyhedralCurrent, h: float) -> PolyhedralCurrent:
    """Split every segment into equal pieces with lengths in [h, 2h].

    Segments already in [h, 2h] are kept (the upper bound is inclusive).
    """
    if np.any(current.lengths < h * (1 - 1e-12)):
        raise ValueError("segment shorter than h")
    nodes = [p for p in current.nodes]
    edges, thetas = [], []
    for (i, j), th, L in zip(current.edges, current.theta, current.lengths):
        k = 1 if L <= 2 * h * (1 + 1e-12) else int(np.ceil(L / (2 * h)))
        a, b = current.nodes[i], current.nodes[j]
        prev = i
        for m in range(1, k):
            nodes.append(a + (b - a) * m / k)
            edges.append((prev, len(nodes) - 1))
            thetas.append(th)
            prev = len(nodes) - 1
        edges.append((prev, j))
        thetas.append(th)
    return PolyhedralCurrent(np.array(nodes), edges, thetas, current.eps, current.lattice)


# ---------------------------------------------------------------------------
# Weak-* comparison


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass
class TestPanel:
    """Tensor-product bumps phi(x) = prod_k bump((x_k - c_k) / w), bump(s) = exp(-1/(1-s^2))."""
    centers: np.ndarray
    width: float
    __test__ = False  # not a pytest class

    @classmethod
    def grid(cls, box: Box, per_axis: int = 3, width: float | None = None):
        axes = [box.lo[k] + box.sides[k] * (np.arange(per_axis) + 0.5) / per_axis for k in range(3)]
        c = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        w = width if width is not None else float(box.sides.min()) / per_axis
        return cls(c, w)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = (x[..., None, :] - self.centers) / self.width
        return np.prod(_bump(s), axis=-1)  # (..., n_tests)

    @property
    def lipschitz(self) -> float:
        # max |bump'| on (-1, 1), times max bump^2, times sqrt(3), over w
        s = np.linspace(-0.999, 0.999, 20001)
        b = _bump(s)
        db = np.abs(np.gradient(b, s)).max()
        return float(np.sqrt(3) * db * b.max() ** 2 / self.width)


def pair(current: PolyhedralCurrent, panel: TestPanel, order: int = 16, pieces: int = 64):
    """<current / eps, phi> for every test function: array (n_tests, 3, 3)."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    u = (np.arange(pieces)[:, None] + 0.5 * (xg + 1)[None, :]).ravel() / pieces
    w = np.tile(wg / 2, pieces) / pieces
    out = np.zeros((len(panel.centers), 3, 3))
    for (a, b), th, tau, L in zip(current.endpoints(), current.theta, current.tau, current.lengths):
        pts = a + u[:, None] * (b - a)
        integral = (panel(pts) * w[:, None]).sum(axis=0) * L
        out += integral[:, None, None] * np.outer(th, tau)[None]
    return out


def weak_star_gap(current_eps: PolyhedralCurrent, current_limit: PolyhedralCurrent, panel: TestPanel) -> float:
    """max over the panel of |<mu_eps / eps - mu, phi>| (Frobenius norm)."""
    diff = pair(current_eps, panel) - pair(current_limit, panel)
    return float(np.linalg.norm(diff.reshape(len(diff), -1), axis=1).max())
