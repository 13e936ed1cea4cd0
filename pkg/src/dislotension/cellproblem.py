"""Hollow-cylinder cell problem and the mixed-growth coercivity floor.

The competitor is beta_{b,t} + Du on Q_t((B_R minus B_r) x (0, h)).  We work in
s = ln(rho), theta, z: with e'_r = Q_t e_r, e'_theta = Q_t e_theta,

    rho (beta_{b,t} + Du) = f(theta) (x) e'_theta + g (x) e'_r
                            + d_s u (x) e'_r + d_theta u (x) e'_theta + e^s d_z u (x) t

and rho^2 cancels the area element rho drho dtheta = rho^2 ds dtheta, so the
energy density in (s, theta, z) is 1/2 C G . G with G the bracket above.
Trilinear (Q1) elements on the logarithmic grid discretize u.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.linalg import cg

from .elasticity import ElasticTensor, MixedGrowth, phi_p_envelope
from .geometry import frame
from .linetension import AngularProfile, solve_profile


class ConvergenceFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class CylGrid:
    n_r: int
    n_theta: int
    n_z: int

    def __post_init__(self):
        if min(self.n_r, self.n_theta, self.n_z) < 4:
            raise ValueError("every grid count must be at least 4")

    @classmethod
    def for_ratio(cls, ratio: float, per_unit_log: float = 4.0, n_theta: int = 32, n_z: int = 8):
        """Radial count proportional to ln(R/r): fixed grid density per decade."""
        n_r = max(4, int(np.ceil(per_unit_log * np.log(ratio))) + 1)
        return cls(n_r, n_theta, n_z)

    def radii(self, r: float, R: float):
        return np.exp(np.linspace(np.log(r), np.log(R), self.n_r))

    def angles(self):
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    def heights(self, h: float):
        return np.linspace(0.0, h, self.n_z)

    @property
    def n_nodes(self) -> int:
        return self.n_r * self.n_theta * self.n_z


@dataclass
class CellResult:
    value: float
    iterations: int
    residual: float
    psi: float
    energy: float          # unnormalized minimal energy
    u: np.ndarray          # (n_r, n_theta, n_z, 3)
    profile: AngularProfile
    grid: CylGrid
    r: float
    R: float
    h: float

    def as_dict(self):
        return {"value": self.value, "iterations": self.iterations,
                "residual": self.residual, "psi": self.psi, "energy": self.energy}

    def circulation(self, i: int, k: int, order: int = 8) -> np.ndarray:
        """Circulation of beta_{b,t} + Du around the grid circle (s_i, z_k).

        Du contributes the telescoping sum of nodal differences; f is integrated
        with Gauss quadrature on every angular cell.
        """
        th = self.grid.angles()
        d = 2 * np.pi / self.grid.n_theta
        x, w = np.polynomial.legendre.leggauss(order)
        pts = (th[:, None] + 0.5 * d * (x + 1)).ravel()
        f_part = (self.profile.f(pts) * np.tile(0.5 * d * w, len(th))[:, None]).sum(axis=0)
        u = self.u[i, :, k]
        return f_part + (np.roll(u, -1, axis=0) - u).sum(axis=0)


def _q1_reference(xs, ys, zs):
    """Values and reference derivatives of the 8 trilinear shape functions."""
    corners = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    X, Y, Z = X.ravel(), Y.ravel(), Z.ravel()

    def lin(v, c):
        return v if c else 1 - v

    def dlin(c):
        return 1.0 if c else -1.0

    dN = np.empty((len(X), 8, 3))
    for a, (cx, cy, cz) in enumerate(corners):
        dN[:, a, 0] = dlin(cx) * lin(Y, cy) * lin(Z, cz)
        dN[:, a, 1] = lin(X, cx) * dlin(cy) * lin(Z, cz)
        dN[:, a, 2] = lin(X, cx) * lin(Y, cy) * dlin(cz)
    return corners, dN, X, Y


def assemble(C: ElasticTensor, profile: AngularProfile, h: float, R: float, r: float, grid: CylGrid):
    """Stiffness matrix, load vector and the u = 0 energy of the cell problem."""
    s_nodes = np.log(grid.radii(r, R))
    ds = s_nodes[1] - s_nodes[0]
    dth = 2 * np.pi / grid.n_theta
    dz = h / (grid.n_z - 1)
    gx, gw = np.polynomial.legendre.leggauss(2)
    tx, tw = np.polynomial.legendre.leggauss(3)
    gx, tx = 0.5 * (gx + 1), 0.5 * (tx + 1)
    corners, dNref, Xq, Yq = _q1_reference(gx, tx, gx)
    wq = np.einsum("i,j,k->ijk", 0.5 * gw, 0.5 * tw, 0.5 * gw).ravel() * ds * dth * dz
    nq = len(wq)

    Q = profile.Q
    t = profile.t
    ne_r, ne_t = grid.n_r - 1, grid.n_theta
    # quadrature points for every (radial cell, angular cell)
    s_q = s_nodes[:-1, None] + ds * Xq[None, :]                       # (ne_r, nq)
    th_q = (grid.angles()[:, None] + dth * Yq[None, :])               # (ne_t, nq)
    e_r, e_t, _ = frame(th_q)
    Er, Et = e_r @ Q.T, e_t @ Q.T                                     # (ne_t, nq, 3)
    dN = dNref / np.array([ds, dth, dz])                              # (nq, 8, 3)
    # w[i, j, q, a, :] = d_s N_a Er + d_theta N_a Et + e^s d_z N_a t
    W = (dN[None, None, :, :, 0, None] * Er[None, :, :, None, :]
         + dN[None, None, :, :, 1, None] * Et[None, :, :, None, :]
         + (np.exp(s_q)[:, None, :, None, None] * dN[None, None, :, :, 2, None]) * t)
    C4 = C.entries
    # element matrices indexed (radial cell, angular cell, a, m, b, n)
    Ke = np.einsum("q,itqac,mcnd,itqbd->itambn", wq, W, C4, W, optimize=True)
    f_q = profile.f(th_q)                                             # (ne_t, nq, 3)
    B = (np.einsum("tqm,tqj->tqmj", f_q, Et)
         + np.einsum("m,tqj->tqmj", profile.g, Er))                   # (ne_t, nq, 3, 3)
    CB = np.einsum("mjnl,tqnl->tqmj", C4, B)
    le = np.einsum("q,tqmc,itqac->itam", wq, CB, W)                    # (ne_r, ne_t, 8, 3)
    e0 = 0.5 * np.einsum("q,tqmj,tqmj->", wq, CB, B) * ne_r * (grid.n_z - 1)

    # global numbering: node (i, j, k) -> (i * n_theta + j) * n_z + k
    I = np.arange(ne_r)[:, None, None, None]
    J = np.arange(ne_t)[None, :, None, None]
    K = np.arange(grid.n_z - 1)[None, None, :, None]
    c = corners
    nodes = ((I + c[:, 0]) * grid.n_theta + (J + c[:, 1]) % grid.n_theta) * grid.n_z + K + c[:, 2]
    dofs = (3 * nodes[..., None] + np.arange(3)).reshape(ne_r, ne_t, grid.n_z - 1, 24)
    Ke = Ke.reshape(ne_r, ne_t, 24, 24)
    n = 3 * grid.n_nodes
    rows = np.broadcast_to(dofs[..., :, None], dofs.shape + (24,)).ravel()
    cols = np.broadcast_to(dofs[..., None, :], dofs.shape + (24,)).ravel()
    vals = np.broadcast_to(Ke[:, :, None], dofs.shape + (24,)).ravel()
    Kmat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    load = np.bincount(dofs.ravel(), np.broadcast_to(le.reshape(ne_r, ne_t, 1, 24), dofs.shape).ravel(),
                       minlength=n)
    return Kmat, load, float(e0)


def infcyl(C: ElasticTensor, b, t, h: float | None = None, R: float = 1.0, r: float = 0.1,
           grid: CylGrid | None = None, rtol: float = 1e-10, maxiter: int = 20000,
           modes: int = 32, profile: AngularProfile | None = None) -> CellResult:
    """Minimize the normalized cell energy over grid displacements u."""
    h = R if h is None else h
    if not (0 < 2 * r <= R <= h):
        raise ValueError(f"need 0 < 2r <= R <= h, got r={r}, R={R}, h={h}")
    grid = CylGrid.for_ratio(R / r) if grid is None else grid
    if profile is None:
        profile = solve_profile(C, b, t, modes=modes)
    norm = h * np.log(R / r)
    shape = (grid.n_r, grid.n_theta, grid.n_z, 3)
    if np.linalg.norm(profile.b) == 0:
        return CellResult(0.0, 0, 0.0, profile.psi, 0.0, np.zeros(shape), profile, grid, r, R, h)
    K, load, e0 = assemble(C, profile, h, R, r, grid)
    # translations span the kernel; pinning node 0 removes them
    keep = np.arange(3, K.shape[0])
    Kr = K[keep][:, keep].tocsr()
    rhs = -load[keep]
    M = _preconditioner(Kr)
    iters = [0]

    def count(_):
        iters[0] += 1

    x, info = cg(Kr, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    res = float(np.linalg.norm(Kr @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if info != 0 or res > 10 * rtol:
        raise ConvergenceFailure(f"CG stopped after {iters[0]} iterations with residual {res:.3e}")
    u = np.zeros(K.shape[0])
    u[keep] = x
    energy = e0 + 0.5 * float(load @ u)
    energy = max(energy, 0.0)
    return CellResult(energy / norm, iters[0], res, profile.psi, energy, u.reshape(shape),
                      profile, grid, r, R, h)


def _preconditioner(K):
    try:
        import pyamg
    except ImportError:  # pragma: no cover - pyamg is a declared dependency
        d = K.diagonal()
        return sp.diags(1.0 / d)
    ml = pyamg.smoothed_aggregation_solver(K, symmetry="hermitian", max_coarse=500)
    return ml.aspreconditioner(cycle="V")


def sweep(C: ElasticTensor, b, t, ratios, R: float = 1.0, per_unit_log: float = 4.0,
          n_theta: int = 32, n_z: int = 8, modes: int = 32):
    """infcyl over r = R * ratio at a fixed grid density per unit of ln(R/r)."""
    profile = solve_profile(C, b, t, modes=modes)
    out = []
    for q in ratios:
        grid = CylGrid.for_ratio(1.0 / q, per_unit_log, n_theta, n_z)
        out.append(infcyl(C, b, t, R, R, q * R, grid, profile=profile))
    return out


def extrapolate(ratios, values):
    """Least-squares fit value = psi_inf - a / ln(1/ratio); returns (psi_inf, a)."""
    x = 1.0 / np.log(1.0 / np.asarray(ratios, dtype=float))
    A = np.stack([np.ones_like(x), -x], axis=1)
    (p_inf, a), *_ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
    return float(p_inf), float(a)


def coercivity_lower_bound(mg: MixedGrowth, eps: float, b, r: float, R: float, h: float) -> float:
    """h * int_r^R Phi_p**(eps |b| / (2 pi rho)) rho drho by adaptive quadrature."""
    if not (0 < eps <= r < R <= h):
        raise ValueError(f"need 0 < eps <= r < R <= h, got eps={eps}, r={r}, R={R}, h={h}")
    nb = float(np.linalg.norm(b))
    if nb == 0:
        return 0.0
    a = eps * nb / (2 * np.pi)
    # breakpoints where the argument crosses the tangency points
    brk = [a / s for s in (mg.t1, mg.t2) if r < a / s < R]

    def f(rho):
        return float(phi_p_envelope(a / rho, mg)) * rho

    val, _ = quad(f, r, R, points=brk or None, epsabs=0.0, epsrel=1e-12, limit=200)
    return h * val
