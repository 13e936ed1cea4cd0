"""Elasticity tensors, the mixed-growth function and the two model energy densities.

Tensors act on 3x3 matrices.  Internally a tensor is kept both as the rank-4
array ``C[i, j, k, l]`` and as the 9x9 matrix of the induced linear map on
row-major vectorized matrices, ``M[3*i + j, 3*k + l] = C[i, j, k, l]``, so that
``C A . A = vec(A) @ M @ vec(A)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

ROTATION_TOL = 1e-10


def _sym_basis():
    basis = []
    for i in range(3):
        E = np.zeros((3, 3))
        E[i, i] = 1.0
        basis.append(E)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        E = np.zeros((3, 3))
        E[i, j] = E[j, i] = np.sqrt(0.5)
        basis.append(E)
    return np.array([E.ravel() for E in basis])


def _skew_basis():
    basis = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        E = np.zeros((3, 3))
        E[i, j] = np.sqrt(0.5)
        E[j, i] = -np.sqrt(0.5)
        basis.append(E.ravel())
    return np.array(basis)


SYM_BASIS = _sym_basis()    # (6, 9), orthonormal in the Frobenius product
SKEW_BASIS = _skew_basis()  # (3, 9)


@dataclass(frozen=True)
class ValidationReport:
    major_symmetry_residual: float
    skew_kernel_residual: float
    c0: float
    tol: float = 1e-12

    @property
    def coercive(self) -> bool:
        return self.c0 > self.tol

    @property
    def admissible(self) -> bool:
        return (self.major_symmetry_residual <= self.tol
                and self.skew_kernel_residual <= self.tol
                and self.coercive)

    def as_dict(self):
        return {
            "major_symmetry_residual": self.major_symmetry_residual,
            "skew_kernel_residual": self.skew_kernel_residual,
            "c0": self.c0,
            "coercive": self.coercive,
            "admissible": self.admissible,
        }


class ElasticTensor:
    """Fourth-order elasticity tensor.  Immutable after construction."""

    __slots__ = ("_entries", "_matrix", "_report")

    def __init__(self, entries):
        C = np.array(entries, dtype=float).reshape(3, 3, 3, 3)
        C.setflags(write=False)
        M = C.reshape(9, 9).copy()
        M.setflags(write=False)
        object.__setattr__(self, "_entries", C)
        object.__setattr__(self, "_matrix", M)
        object.__setattr__(self, "_report", None)

    def __setattr__(self, name, value):
        raise AttributeError("ElasticTensor is immutable")

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def c0(self) -> float:
        return self.report.c0

    @property
    def report(self) -> ValidationReport:
        if self._report is None:
            object.__setattr__(self, "_report", validate(self))
        return self._report

    def apply(self, A):
        """Return C A for a matrix or a stack of matrices ``(..., 3, 3)``."""
        A = np.asarray(A, dtype=float)
        return np.einsum("ijkl,...kl->...ij", self._entries, A)

    def quad(self, A, B=None):
        """C A . B (defaults to B = A), broadcast over leading axes."""
        A = np.asarray(A, dtype=float)
        B = A if B is None else np.asarray(B, dtype=float)
        a = A.reshape(A.shape[:-2] + (9,))
        b = B.reshape(B.shape[:-2] + (9,))
        return np.einsum("...i,ij,...j->...", a, self._matrix, b)

    def acoustic(self, k):
        """Acoustic matrix A(k)_{mj} = sum_{il} C_{mijl} k_i k_l for k of shape (..., 3)."""
        k = np.asarray(k, dtype=float)
        return np.einsum("mijl,...i,...l->...mj", self._entries, k, k)

    def __eq__(self, other):
        if not isinstance(other, ElasticTensor):
            return NotImplemented
        return np.array_equal(self._entries, other._entries)

    def allclose(self, other, atol=1e-12):
        return np.allclose(self._entries, other._entries, rtol=0.0, atol=atol)

    def __hash__(self):
        return hash(self._entries.tobytes())

    def __repr__(self):
        return f"ElasticTensor(c0={self.c0:.6g})"


def validate(C: ElasticTensor, tol: float = 1e-12) -> ValidationReport:
    """Check major symmetry, the skew kernel and coercivity on symmetric matrices.

    ``c0`` is the smallest eigenvalue of the restriction of C to symmetric
    matrices divided by 4, i.e. the best constant in ``C A . A >= c0 |A + A^T|^2``.
    Never raises.
    """
    M = C.matrix
    scale = max(1.0, float(np.abs(M).max()))
    major = float(np.abs(M - M.T).max()) / scale
    skew = float(np.abs(M @ SKEW_BASIS.T).max()) / scale
    Msym = SYM_BASIS @ (0.5 * (M + M.T)) @ SYM_BASIS.T
    lam_min = float(np.linalg.eigvalsh(Msym)[0])
    c0 = max(lam_min, 0.0) / 4.0
    return ValidationReport(major, skew, c0, tol)


def require_admissible(C: ElasticTensor) -> None:
    rep = C.report
    if not rep.admissible:
        raise ValueError(f"elasticity tensor is not admissible: {rep.as_dict()}")


def make_isotropic(lam: float, mu: float) -> ElasticTensor:
    if not (mu > 0 and 3 * lam + 2 * mu > 0):
        raise ValueError(f"non-coercive isotropic moduli lambda={lam}, mu={mu}")
    d = np.eye(3)
    C = (lam * np.einsum("ij,kl->ijkl", d, d)
         + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))
    return ElasticTensor(C)


def make_cubic(c11: float, c12: float, c44: float) -> ElasticTensor:
    """Cubic tensor in the lattice frame from the three Voigt constants."""
    if not (c11 - c12 > 0 and c11 + 2 * c12 > 0 and c44 > 0):
        raise ValueError(f"cubic stability violated: c11={c11}, c12={c12}, c44={c44}")
    C = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            C[i, i, j, j] = c11 if i == j else c12
            if i != j:
                C[i, j, i, j] = C[i, j, j, i] = c44
    return ElasticTensor(C)


def check_rotation(Q, tol: float = ROTATION_TOL) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {Q.shape}")
    if np.abs(Q @ Q.T - np.eye(3)).max() > tol or np.linalg.det(Q) <= 0:
        raise ValueError("matrix is not a rotation")
    return Q


def rotate(C: ElasticTensor, Q) -> ElasticTensor:
    """C_Q with C_Q A . B = C (Q A Q^T) . (Q B Q^T)."""
    Q = check_rotation(Q)
    return ElasticTensor(np.einsum("ai,bj,ck,dl,abcd->ijkl", Q, Q, Q, Q, C.entries))


def random_admissible(rng, scale: float = 1.0) -> ElasticTensor:
    """Random admissible tensor: a random SPD form on symmetric matrices.

    The eigenvalues are drawn in [0.5, 2] * scale so the condition number stays moderate.
    """
    V, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    lam = scale * rng.uniform(0.5, 2.0, size=6)
    S6 = (V * lam) @ V.T
    M = SYM_BASIS.T @ S6 @ SYM_BASIS
    return ElasticTensor(M.reshape(3, 3, 3, 3))


def random_rotation(rng) -> np.ndarray:
    from scipy.spatial.transform import Rotation
    return Rotation.random(random_state=rng).as_matrix()


def linearized_tensor(kinematics: str) -> ElasticTensor:
    """Second derivative of the model density at its reference state.

    ``finite``: W = Phi_p(dist(F, SO(3))) has D^2 W(Id) A . A = 2 |sym A|^2,
    the isotropic tensor with lambda = 0, mu = 1.  ``linear``: W = Phi_p(|F + F^T|)
    has D^2 W(0) A . A = 8 |sym A|^2 (lambda = 0, mu = 4).
    """
    if kinematics == "finite":
        return make_isotropic(0.0, 1.0)
    if kinematics == "linear":
        return make_isotropic(0.0, 4.0)
    raise ValueError(f"unknown kinematics {kinematics!r}")


# ---------------------------------------------------------------------------
# JSON representation


def tensor_to_dict(C: ElasticTensor) -> dict:
    return {"kind": "raw", "entries": [float(x) for x in C.entries.ravel()]}


def tensor_from_dict(doc: dict) -> ElasticTensor:
    """Build a tensor from ``{kind, parameters | entries, frame}``.

    ``frame`` (optional) is a rotation whose columns are the material axes
    expressed in the sample frame; the returned tensor is in the sample frame.
    """
    kind = doc.get("kind")
    allowed = {"kind", "frame", "lambda", "mu", "c11", "c12", "c44", "entries"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown tensor keys: {sorted(unknown)}")
    if kind == "isotropic":
        C = make_isotropic(float(doc["lambda"]), float(doc["mu"]))
    elif kind == "cubic":
        C = make_cubic(float(doc["c11"]), float(doc["c12"]), float(doc["c44"]))
    elif kind == "raw":
        entries = np.asarray(doc["entries"], dtype=float)
        if entries.size != 81:
            raise ValueError("raw tensor needs 81 entries")
        C = ElasticTensor(entries)
        require_admissible(C)
    else:
        raise ValueError(f"unknown tensor kind {kind!r}")
    if doc.get("frame") is not None:
        C = rotate(C, np.asarray(doc["frame"], dtype=float).T)
    return C


# ---------------------------------------------------------------------------
# Mixed growth


def phi_p(t, p: float):
    """min(t^p, t^2) for t >= 0."""
    if not 1 < p <= 2:
        raise ValueError(f"exponent p={p} outside (1, 2]")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("phi_p is defined for t >= 0")
    out = np.minimum(t ** p, t * t)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MixedGrowth:
    """Exponent p with the tangency points of the convex envelope of phi_p.

    The envelope is s^2 on [0, t1], the common tangent on [t1, t2] and s^p beyond.
    """
    p: float
    t1: float
    t2: float
    c_p: float
    iterations: int = field(default=0, compare=False)

    @property
    def slope(self) -> float:
        return 2.0 * self.t1

    def tangent(self, t):
        return self.t1 ** 2 + 2.0 * self.t1 * (np.asarray(t, dtype=float) - self.t1)


class ConvergenceError(RuntimeError):
    pass


def _tangency_points(p: float, tol: float = 1e-12, maxiter: int = 200):
    # Newton on the common-tangent system written in x = log t:
    #   2 t1 = p t2^(p-1),  t1^2 = (p-1) t2^p.
    def residual(x):
        with np.errstate(over="ignore", invalid="ignore"):
            t1, t2 = np.exp(x)
            r = np.array([2 * t1 - p * t2 ** (p - 1), t1 ** 2 - (p - 1) * t2 ** p])
        return np.where(np.isfinite(r), r, np.inf)

    def jac(x):
        t1, t2 = np.exp(x)
        return np.array([[2 * t1, -p * (p - 1) * t2 ** (p - 1)],
                         [2 * t1 ** 2, -p * (p - 1) * t2 ** p]])

    x = np.array([np.log(0.9), np.log(1.2)])
    for it in range(1, maxiter + 1):
        r = residual(x)
        dx = np.linalg.lstsq(jac(x), -r, rcond=None)[0]
        # backtracking keeps the iteration stable when p is close to 1 and t2 is large
        step = 1.0
        while step > 1e-4 and np.abs(residual(x + step * dx)).max() > np.abs(r).max():
            step *= 0.5
        x = x + step * dx
        if np.abs(residual(x)).max() <= tol and np.abs(step * dx).max() <= 1e-8:
            return float(np.exp(x[0])), float(np.exp(x[1])), it
    raise ConvergenceError(f"tangency Newton iteration did not converge in {maxiter} steps")


@lru_cache(maxsize=64)
def mixed_growth(p: float) -> MixedGrowth:
    """Precompute (and cache) the envelope data for exponent p."""
    if not 1 < p <= 2:
        raise ValueError(f"exponent p={p} outside (1, 2]")
    if p == 2:
        return MixedGrowth(2.0, 1.0, 1.0, 1.0, 0)
    t1, t2, its = _tangency_points(p)
    t1, t2 = min(t1, 1.0), max(t2, 1.0)  # roundoff when p is within ~1e-8 of 2
    mg = MixedGrowth(float(p), t1, t2, 1.0, its)

    def neg_ratio(t):
        return -phi_p(t, p) / float(mg.tangent(t))

    c_p = phi_p(1.0, p) / float(mg.tangent(1.0))
    for lo, hi in ((t1, 1.0), (1.0, t2)):
        if hi - lo < 1e-12:
            continue
        res = minimize_scalar(neg_ratio, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        c_p = max(c_p, -res.fun)
    return MixedGrowth(float(p), t1, t2, float(c_p), its)


def phi_p_envelope(t, mg: MixedGrowth):
    """Convex envelope of phi_p."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("envelope is evaluated for t >= 0")
    out = np.where(t <= mg.t1, t * t,
                   np.where(t >= mg.t2, t ** mg.p, mg.tangent(t)))
    return out if out.ndim else float(out)


def split_small_large(values, p: float):
    """Split f = a + b with a = f on {|f| <= 1}; then sum |a|^2 + |b|^p = sum phi_p(|f|)."""
    f = np.asarray(values, dtype=float)
    norms = np.linalg.norm(f.reshape(f.shape[:-2] + (-1,)), axis=-1)
    small = (norms <= 1.0)[..., None, None]
    a = np.where(small, f, 0.0)
    return a, f - a


# ---------------------------------------------------------------------------
# Densities


def dist_SO3(F):
    """Frobenius distance to SO(3), vectorized over leading axes."""
    F = np.asarray(F, dtype=float)
    s = np.linalg.svd(F, compute_uv=False)
    det = np.linalg.det(F)
    target = np.ones_like(s)
    target[..., 2] = np.where(det >= 0, 1.0, -1.0)
    d = np.sqrt(((s - target) ** 2).sum(axis=-1))
    return d if d.ndim else float(d)


def density_finite(F, mg: MixedGrowth):
    return phi_p(dist_SO3(F), mg.p)


def density_linear(F, mg: MixedGrowth):
    F = np.asarray(F, dtype=float)
    S = F + np.swapaxes(F, -1, -2)
    return phi_p(np.linalg.norm(S.reshape(S.shape[:-2] + (9,)), axis=-1), mg.p)


def density(kinematics: str):
    if kinematics == "finite":
        return density_finite
    if kinematics == "linear":
        return density_linear
    raise ValueError(f"unknown kinematics {kinematics!r}")
