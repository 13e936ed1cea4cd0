"""Orientation frames, cylindrical coordinates along a line, field transformations
and the transversality test for axis-aligned boxes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .elasticity import check_rotation

E3 = np.array([0.0, 0.0, 1.0])


def unit(t, tol: float = 1e-10) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape != (3,) or abs(np.linalg.norm(t) - 1.0) > tol:
        raise ValueError(f"expected a unit 3-vector, got {t}")
    return t


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_to(t) -> np.ndarray:
    """Rotation Q_t with Q_t e3 = t (Rodrigues about e3 x t).

    Identity for t = e3 and the half turn about e1 for t = -e3.
    """
    t = unit(t)
    c = float(t @ E3)
    if c > 0 and not np.any(t[:2]):
        return np.eye(3)
    if c <= -1.0 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    K = skew(np.cross(E3, t))
    Q = np.eye(3) + K + K @ K / (1.0 + c)
    # one polar cleanup keeps det = 1 and orthogonality at machine precision
    U, _, Vt = np.linalg.svd(Q)
    return U @ Vt


def rotation_about(axis, angle: float) -> np.ndarray:
    from scipy.spatial.transform import Rotation
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def frame(theta):
    """(e_r, e_theta, e_z) at angle theta; arrays of shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    z = np.zeros_like(theta)
    e_r = np.stack([c, s, z], axis=-1)
    e_t = np.stack([-s, c, z], axis=-1)
    e_z = np.stack([z, z, z + 1.0], axis=-1)
    return e_r, e_t, e_z


def phi_t(r, theta, z, t, Q=None):
    """Point Q_t (r cos theta, r sin theta, z)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("phi_t needs r > 0")
    Q = rotation_to(t) if Q is None else check_rotation(Q)
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    local = np.stack(np.broadcast_arrays(r * np.cos(theta), r * np.sin(theta), z), axis=-1)
    return local @ Q.T


def cylindrical_coordinates(x, t, Q=None):
    """Inverse of phi_t: (r, theta, z) of points x in the frame of Q_t."""
    Q = rotation_to(t) if Q is None else check_rotation(Q)
    y = np.asarray(x, dtype=float) @ Q
    r = np.hypot(y[..., 0], y[..., 1])
    theta = np.arctan2(y[..., 1], y[..., 0])
    return r, theta, y[..., 2]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, L: float, origin=(0.0, 0.0, 0.0)):
        o = np.asarray(origin, dtype=float)
        return cls(o, o + L)

    @property
    def sides(self):
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def on_boundary(self, x, tol: float = 1e-10):
        x = np.asarray(x, dtype=float)
        inside = self.contains(x, tol)
        near = np.any((np.abs(x - self.lo) <= tol) | (np.abs(x - self.hi) <= tol), axis=-1)
        return inside & near

    def as_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class HollowCylinder:
    """Q_t ((B'_R minus B'_r) x (0, h)) + base."""
    r: float
    R: float
    h: float
    t: np.ndarray = field(default_factory=lambda: E3.copy())
    base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    relaxed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "t", unit(self.t))
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        if not (0 <= self.r < self.R):
            raise ValueError(f"need 0 <= r < R, got r={self.r}, R={self.R}")
        if not self.relaxed and self.R > self.h:
            raise ValueError(f"need R <= h, got R={self.R}, h={self.h}")
        if self.h <= 0:
            raise ValueError("height must be positive")

    def contains(self, x):
        r, _, z = cylindrical_coordinates(np.asarray(x) - self.base, self.t)
        return (r > self.r) & (r < self.R) & (z > 0) & (z < self.h)


# ---------------------------------------------------------------------------
# Field transformations


@dataclass
class SampledField:
    """Matrix field sampled on a tensor grid, with interpolated point access."""
    axes: tuple
    values: np.ndarray  # (nx, ny, nz, 3, 3)
    method: str = "linear"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape != shape + (3, 3):
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")
        self._interp = RegularGridInterpolator(
            self.axes, self.values.reshape(shape + (9,)), method=self.method,
            bounds_error=False, fill_value=np.nan)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp(x.reshape(-1, 3)).reshape(x.shape[:-1] + (3, 3))
        if np.isnan(out).any():
            raise ValueError("mapped point outside the sampled domain")
        return out


def transform_field(beta, F, Q, lam: float, v, x):
    """Evaluate hat beta(x) = F beta(lam Q x + v) Q at points x of shape (..., 3).

    ``beta`` is any callable mapping points (..., 3) to matrices (..., 3, 3),
    e.g. a :class:`SampledField`.
    """
    if lam <= 0:
        raise ValueError("dilation must be positive")
    Q = check_rotation(Q)
    F = np.asarray(F, dtype=float)
    x = np.asarray(x, dtype=float)
    y = lam * x @ Q.T + np.asarray(v, dtype=float)
    return F @ beta(y) @ Q


def curl_fd(beta, x, h: float = 1e-4):
    """Row-wise curl (curl beta)_{ij} = eps_{jkl} d_k beta_{il} by central differences."""
    x = np.asarray(x, dtype=float)
    grad = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        grad.append((beta(x + e) - beta(x - e)) / (2 * h))
    D = np.stack(grad, axis=-1)  # D[..., i, l, k] = d_k beta_il
    out = np.empty(x.shape[:-1] + (3, 3))
    out[..., :, 0] = D[..., :, 2, 1] - D[..., :, 1, 2]
    out[..., :, 1] = D[..., :, 0, 2] - D[..., :, 2, 0]
    out[..., :, 2] = D[..., :, 1, 0] - D[..., :, 0, 1]
    return out


def transform_current(current, F, Q, lam: float, v):
    """Push a polyhedral current through x -> Q^T (x - v) / lam.

    Matches hat beta = F beta(lam Q x + v) Q: the new measure has density
    (1/lam) F theta (x) Q^T tau on the mapped segments.
    """
    from .network import PolyhedralCurrent

    Q = check_rotation(Q)
    F = np.asarray(F, dtype=float)
    nodes = (current.nodes - np.asarray(v, dtype=float)) @ Q / lam
    theta = current.theta @ F.T / lam
    return PolyhedralCurrent(nodes, current.edges, theta, eps=current.eps, lattice=None)


# ---------------------------------------------------------------------------
# Transversality


@dataclass
class TransversalityReport:
    transversal: bool
    intersections: list
    violations: list

    def as_dict(self):
        return {"transversal": self.transversal,
                "intersections": self.intersections,
                "violations": self.violations}


def transversal(current, box: Box, min_angle: float = 1e-6, tol: float = 1e-10) -> TransversalityReport:
    """True iff the curve meets the box boundary only at isolated interior face points,
    each on a single segment, with direction not tangent to the face."""
    violations = []
    hits = []  # (point, segment index)
    sin_min = np.sin(min_angle)
    for s, (a, b) in enumerate(current.endpoints()):
        d = b - a
        length = np.linalg.norm(d)
        for axis in range(3):
            others = [i for i in range(3) if i != axis]
            for c in (box.lo[axis], box.hi[axis]):
                in_plane = abs(a[axis] - c) <= tol and abs(b[axis] - c) <= tol
                if in_plane:
                    lo = np.minimum(a, b)[others]
                    hi = np.maximum(a, b)[others]
                    if np.all(hi >= box.lo[others] - tol) and np.all(lo <= box.hi[others] + tol):
                        violations.append({"segment": s, "kind": "lies_in_face",
                                           "axis": axis, "plane": float(c)})
                    continue
                if abs(d[axis]) <= tol * max(length, 1.0):
                    continue
                u = (c - a[axis]) / d[axis]
                if u < -tol or u > 1 + tol:
                    continue
                p = a + u * d
                q = p[others]
                if np.any(q < box.lo[others] - tol) or np.any(q > box.hi[others] + tol):
                    continue
                if np.any(np.abs(q - box.lo[others]) <= tol) or np.any(np.abs(q - box.hi[others]) <= tol):
                    violations.append({"segment": s, "kind": "edge_or_corner", "point": p.tolist()})
                    continue
                if abs(d[axis]) / length < sin_min:
                    violations.append({"segment": s, "kind": "tangential", "point": p.tolist()})
                    continue
                hits.append((p, s))
    points = []
    for p, s in hits:
        for entry in points:
            if np.linalg.norm(entry["point"] - p) <= tol:
                if s not in entry["segments"]:
                    entry["segments"].append(s)
                break
        else:
            points.append({"point": p, "segments": [s]})
    for entry in points:
        if len(entry["segments"]) > 1:
            violations.append({"segments": entry["segments"], "kind": "shared_point",
                               "point": entry["point"].tolist()})
    intersections = [{"point": e["point"].tolist(), "segments": e["segments"]} for e in points]
    return TransversalityReport(not violations, intersections, violations)
