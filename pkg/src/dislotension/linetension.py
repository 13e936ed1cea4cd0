"""Line-tension energy of straight dislocations.

The strain of an infinite straight dislocation with Burgers vector b along t has
the form

    beta(Phi_t(r, theta, z)) = (1/r) (f(theta) (x) Q_t e_theta + g (x) Q_t e_r)

with int_0^{2 pi} f = b and a constant g.  ``solve_profile`` minimizes the energy
on the unit circle over a truncated Fourier series for f; the minimum is psi(b, t).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .elasticity import ElasticTensor, check_rotation, require_admissible
from .geometry import E3, cylindrical_coordinates, frame, phi_t, rotation_to, unit


class QuadratureError(RuntimeError):
    """The angular quadrature aliases the energy of the computed profile."""


@dataclass(frozen=True)
class AngularProfile:
    C: ElasticTensor
    b: np.ndarray
    t: np.ndarray
    Q: np.ndarray        # rotation with Q e3 = t used for the frame
    a0: np.ndarray       # mean of f, equals b / (2 pi)
    a: np.ndarray        # (M, 3) cosine coefficients of f
    c: np.ndarray        # (M, 3) sine coefficients of f
    g: np.ndarray
    psi: float
    null_space_dim: int
    nq: int
    coefficient_tail: float

    @property
    def modes(self) -> int:
        return len(self.a)

    def f(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.arange(1, self.modes + 1)
        kt = theta[..., None] * k
        return self.a0 + np.cos(kt) @ self.a + np.sin(kt) @ self.c

    def unit_circle_field(self, theta):
        """beta on the unit circle, Phi_t(1, theta, 0)."""
        e_r, e_t, _ = frame(theta)
        Er, Et = e_r @ self.Q.T, e_t @ self.Q.T
        return np.einsum("...i,...j->...ij", self.f(theta), Et) + np.einsum("i,...j->...ij", self.g, Er)

    def energy(self, nq: int) -> float:
        theta = 2 * np.pi * np.arange(nq) / nq
        beta = self.unit_circle_field(theta)
        return float(0.5 * self.C.quad(beta).sum() * 2 * np.pi / nq)


def _basis(theta, M):
    k = np.arange(1, M + 1)
    return np.concatenate([np.cos(np.outer(theta, k)), np.sin(np.outer(theta, k))], axis=1)


def _system(C: ElasticTensor, t, modes: int, nq: int, Q=None):
    """Quadrature operator D, rotated frame and stiffness K of the profile problem."""
    require_admissible(C)
    t = unit(t)
    Q = rotation_to(t) if Q is None else check_rotation(Q)
    if np.abs(Q @ E3 - t).max() > 1e-10:
        raise ValueError("frame rotation must map e3 to t")
    theta = 2 * np.pi * np.arange(nq) / nq
    w = 2 * np.pi / nq
    e_r, e_t, _ = frame(theta)
    Er, Et = e_r @ Q.T, e_t @ Q.T
    P = _basis(theta, modes)                      # (nq, 2M)
    eye = np.eye(3)
    # D[q, (m, j), (p, m')] = delta_{m m'} P[q, p] Et[q, j]; g block uses Er
    Df = np.einsum("qp,qj,mn->qmjpn", P, Et, eye).reshape(nq, 9, 6 * modes)
    Dg = np.einsum("qj,mn->qmjn", Er, eye).reshape(nq, 9, 3)
    D = np.concatenate([Df, Dg], axis=2)          # (nq, 9, n)
    MD = np.einsum("ab,qbn->qan", C.matrix, D)
    n = D.shape[2]
    K = w * D.reshape(-1, n).T @ MD.reshape(-1, n)
    return t, Q, w, D, Et, MD, 0.5 * (K + K.T)


def _solve_psd(K, rhs):
    """Solve K x = rhs; a numerical null space gets a 1e-12 Tikhonov shift."""
    evals, evecs = np.linalg.eigh(K)
    scale = max(evals[-1], 1e-300)
    null_dim = int(np.sum(evals <= 1e-12 * scale))
    if null_dim:
        return np.linalg.solve(K + 1e-12 * scale * np.eye(len(K)), rhs), null_dim
    return evecs @ ((evecs.T @ rhs) / (evals if rhs.ndim == 1 else evals[:, None])), 0


def solve_profile(C: ElasticTensor, b, t, modes: int = 64, nq: int | None = None, Q=None,
                  check_aliasing: bool = True) -> AngularProfile:
    """Minimize the unit-circle energy over f = b/2pi + sum_k (a_k cos k + c_k sin k), g.

    The 6 M + 3 unknowns solve a symmetric positive semidefinite system.  A
    nonzero null space is regularized with a 1e-12 Tikhonov shift and reported.
    """
    if modes < 1:
        raise ValueError("need at least one Fourier mode")
    nq = 4 * modes + 4 if nq is None else int(nq)
    if nq < 4 * modes + 4:
        raise ValueError(f"quadrature with {nq} points is too coarse for {modes} modes")
    b = np.asarray(b, dtype=float)
    t, Q, w, D, Et, MD, K = _system(C, t, modes, nq, Q)
    a0 = b / (2 * np.pi)
    B0 = np.einsum("m,qj->qmj", a0, Et).reshape(nq, 9)
    M9 = C.matrix
    rhs = -w * np.einsum("qa,qan->n", B0, MD)

    x, null_dim = _solve_psd(K, rhs)

    coeffs = x[: 6 * modes].reshape(2 * modes, 3)
    a, c, g = coeffs[:modes], coeffs[modes:], x[6 * modes:]
    mags = np.linalg.norm(a, axis=1) + np.linalg.norm(c, axis=1)
    ref = max(mags.max(), np.linalg.norm(a0), np.linalg.norm(x[6 * modes:]))
    tail_start = max(1, (3 * modes) // 4)
    tail = float(mags[tail_start:].max() / ref) if ref > 0 and modes > 1 else 0.0

    beta = B0 + np.einsum("qan,n->qa", D, x)
    psi_val = float(0.5 * w * np.einsum("qa,ab,qb->", beta, M9, beta))
    prof = AngularProfile(C, b.copy(), t.copy(), Q, a0, a, c, g, max(psi_val, 0.0),
                          null_dim, nq, tail)
    if check_aliasing:
        fine = prof.energy(2 * nq)
        if abs(fine - psi_val) > 1e-10 * max(abs(psi_val), 1e-300) and abs(fine - psi_val) > 1e-14:
            raise QuadratureError(f"energy changed from {psi_val} to {fine} when doubling quadrature")
    return prof


def psi(C: ElasticTensor, b, t, modes: int = 64, nq: int | None = None, Q=None) -> float:
    """Line-tension energy psi_C(b, t)."""
    return solve_profile(C, b, t, modes, nq, Q).psi


def energy_matrix(C: ElasticTensor, t, modes: int = 64, nq: int | None = None) -> np.ndarray:
    """Symmetric P(t) with psi(b, t) = b . P(t) b.

    The minimum of a quadratic functional under the linear constraint int f = b is
    a quadratic form in b, so three right-hand sides give psi for every b.
    """
    if modes < 1:
        raise ValueError("need at least one Fourier mode")
    nq = 4 * modes + 4 if nq is None else int(nq)
    t, Q, w, D, Et, MD, K = _system(C, t, modes, nq)
    B0 = np.einsum("mb,qj->qmjb", np.eye(3) / (2 * np.pi), Et).reshape(nq, 9, 3)
    rhs = -w * np.einsum("qab,qan->nb", B0, MD)
    X, _ = _solve_psd(K, rhs)
    beta = B0 + np.einsum("qan,nb->qab", D, X)
    P = 0.5 * w * np.einsum("qab,ac,qcd->bd", beta, C.matrix, beta)
    return 0.5 * (P + P.T)


@lru_cache(maxsize=8192)
def _energy_matrix_cached(C: ElasticTensor, t: tuple, modes: int) -> np.ndarray:
    P = energy_matrix(C, np.array(t), modes)
    P.setflags(write=False)
    return P


def psi_cached(C: ElasticTensor, b, t, modes: int = 32) -> float:
    """psi through the energy matrix, memoized on the rounded direction t."""
    t = np.asarray(t, dtype=float)
    t = tuple(np.round(t / np.linalg.norm(t), 12) + 0.0)
    b = np.asarray(b, dtype=float)
    return max(float(b @ _energy_matrix_cached(C, t, modes) @ b), 0.0)


def eval_beta_bt(profile: AngularProfile, x):
    """Straight-dislocation strain at points x (..., 3); x must stay off the axis."""
    r, theta, _ = cylindrical_coordinates(x, profile.t, profile.Q)
    if np.any(r <= 1e-12):
        raise ValueError("point too close to the dislocation line")
    return profile.unit_circle_field(theta) / r[..., None, None]


def cylinder_energy_exact(profile: AngularProfile, h: float, R: float, r: float) -> float:
    """Energy in the hollow cylinder of height h and radii r < R around the line."""
    if not (0 < r <= R) or h <= 0:
        raise ValueError("need 0 < r <= R and h > 0")
    return h * np.log(R / r) * profile.psi


def cylinder_energy_quadrature(profile: AngularProfile, h: float, R: float, r: float,
                               resolution: int = 64) -> float:
    """Tensor-product quadrature of 1/2 C beta . beta over the hollow cylinder.

    Gauss-Legendre in r and z, trapezoid rule in theta; the field is evaluated at
    the physical points Phi_t(r, theta, z).
    """
    if resolution < 2:
        raise ValueError("need at least 2 points per dimension")
    if not (0 < r < R) or h <= 0:
        raise ValueError("need 0 < r < R and h > 0")
    x, w = np.polynomial.legendre.leggauss(resolution)
    rr = 0.5 * (R - r) * x + 0.5 * (R + r)
    wr = 0.5 * (R - r) * w
    zz = 0.5 * h * (x + 1)
    wz = 0.5 * h * w
    th = 2 * np.pi * np.arange(resolution) / resolution
    wt = 2 * np.pi / resolution
    Rg, Tg, Zg = np.meshgrid(rr, th, zz, indexing="ij")
    pts = phi_t(Rg, Tg, Zg, profile.t, profile.Q)
    dens = 0.5 * profile.C.quad(eval_beta_bt(profile, pts))
    weights = (wr * rr)[:, None, None] * wt * wz[None, None, :]
    return float((dens * weights).sum())
