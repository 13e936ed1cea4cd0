"""Periodic spectral solution of curl beta = mu, div C beta = 0, and field diagnostics.

Fields live on the cube [0, L)^3 sampled at cell centers x_j = (j + 1/2) L / n.
A periodic field is f(x) = sum_k F_k exp(i k . x) with k in 2 pi Z^3 / L; Fourier
arrays use the ``rfftn`` half-spectrum layout (n, n, n // 2 + 1, ...).  Nyquist
modes are kept at zero, as is the k = 0 mode of the strain.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .elasticity import ElasticTensor, check_rotation, dist_SO3, phi_p, require_admissible
from .network import PolyhedralCurrent, point_segment_distance

LEVI = np.zeros((3, 3, 3))
LEVI[0, 1, 2] = LEVI[1, 2, 0] = LEVI[2, 0, 1] = 1.0
LEVI[0, 2, 1] = LEVI[2, 1, 0] = LEVI[1, 0, 2] = -1.0


class ConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PeriodicBox:
    L: float
    n: int

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if self.L <= 0:
            raise ValueError("box side must be positive")

    @property
    def spacing(self) -> float:
        return self.L / self.n

    @property
    def volume(self) -> float:
        return self.L ** 3

    @property
    def half_shape(self):
        return (self.n, self.n, self.n // 2 + 1)

    def wavenumbers(self):
        """Broadcastable (kx, ky, kz) for the half spectrum."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        kz = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.spacing)
        return k[:, None, None], k[None, :, None], kz[None, None, :]

    def kvectors(self) -> np.ndarray:
        kx, ky, kz = np.broadcast_arrays(*self.wavenumbers())
        return np.stack([kx, ky, kz], axis=-1)

    def active(self) -> np.ndarray:
        """Modes carried by the solver: not k = 0 and no Nyquist index."""
        n = self.n
        ix = np.arange(n) != n // 2
        iz = np.arange(n // 2 + 1) != n // 2
        mask = ix[:, None, None] & ix[None, :, None] & iz[None, None, :]
        mask[0, 0, 0] = False
        return mask

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.spacing

    def points(self) -> np.ndarray:
        a = self.axis()
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)

    def to_real(self, coeffs: np.ndarray) -> np.ndarray:
        """Samples at cell centers of sum_k coeffs_k exp(i k . x)."""
        kx, ky, kz = self.wavenumbers()
        shift = np.exp(0.5j * self.spacing * (kx + ky + kz))
        extra = (None,) * (coeffs.ndim - 3)
        X = coeffs * shift[(...,) + extra] * self.n ** 3
        return np.fft.irfftn(X, s=(self.n,) * 3, axes=(0, 1, 2))

    def to_fourier(self, values: np.ndarray) -> np.ndarray:
        """Inverse of ``to_real`` on the half spectrum (Nyquist modes dropped)."""
        kx, ky, kz = self.wavenumbers()
        shift = np.exp(-0.5j * self.spacing * (kx + ky + kz))
        extra = (None,) * (values.ndim - 3)
        X = np.fft.rfftn(values, axes=(0, 1, 2)) / self.n ** 3 * shift[(...,) + extra]
        mask = self.active()
        mask[0, 0, 0] = True
        X[~mask] = 0.0
        return X


# ---------------------------------------------------------------------------
# Dislocation measures


def periodic_line(box: PeriodicBox, b, axis: int = 2, through=(0.5, 0.5)) -> PolyhedralCurrent:
    """Straight line along a coordinate axis spanning the box (closed by periodicity)."""
    others = [i for i in range(3) if i != axis]
    a = np.zeros(3)
    a[others] = np.asarray(through, dtype=float) * box.L
    e = a.copy()
    e[axis] = box.L
    return PolyhedralCurrent.from_segments([(a, e)], [np.asarray(b, dtype=float)])


def mu_hat(current: PolyhedralCurrent, box: PeriodicBox, tol: float = 1e-8) -> np.ndarray:
    """Fourier coefficients of eps * sum theta (x) tau H^1 on the segments.

    Each segment contributes theta (x) tau * l * exp(-i k . m) * sinc(k . tau l / 2) / V
    with m the midpoint.  Raises if some row is not orthogonal to k, i.e. if the
    current is not divergence-free modulo the box.
    """
    out = np.zeros(box.half_shape + (3, 3), dtype=complex)
    if len(current.edges) == 0:
        return out
    kx, ky, kz = box.wavenumbers()
    for theta, tau, ell, m in zip(current.theta, current.tau, current.lengths, current.midpoints):
        if not np.any(theta):
            continue
        phase = np.exp(-1j * kx * m[0]) * np.exp(-1j * ky * m[1]) * np.exp(-1j * kz * m[2])
        ktau = kx * tau[0] + ky * tau[1] + kz * tau[2]
        scal = phase * ell * np.sinc(ktau * ell / (2 * np.pi))
        out += scal[..., None, None] * np.outer(theta, tau)
    out *= current.eps / box.volume
    out[~box.active()] = 0.0
    k = box.kvectors()
    div = np.linalg.norm(np.einsum("...ij,...j->...i", out, k), axis=-1)
    scale = np.abs(out).max() * np.linalg.norm(k, axis=-1).max()
    if scale > 0 and div.max() > tol * scale:
        worst = np.unravel_index(np.argmax(div), div.shape)
        raise ValueError(f"current is not divergence-free in the box (mode {worst}, "
                         f"relative residual {div.max() / scale:.2e})")
    # remove the roundoff-level longitudinal part left by the sinc factors
    k2 = (k * k).sum(axis=-1)
    k2[0, 0, 0] = 1.0
    out -= np.einsum("...i,...j->...ij", np.einsum("...ij,...j->...i", out, k), k) / k2[..., None, None]
    return out


# ---------------------------------------------------------------------------
# Spectral solver


@dataclass
class FourierStrain:
    box: PeriodicBox
    data: np.ndarray  # (n, n, n//2+1, 3, 3) complex

    def __add__(self, other):
        return FourierStrain(self.box, self.data + other.data)

    def __mul__(self, s):
        return FourierStrain(self.box, self.data * s)

    __rmul__ = __mul__

    def spatial(self) -> np.ndarray:
        return self.box.to_real(self.data)

    def energy(self, C: ElasticTensor) -> float:
        """int_box 1/2 C beta . beta by Parseval."""
        w = np.full(self.box.n // 2 + 1, 2.0)
        w[0] = 1.0
        if self.box.n % 2 == 0:
            w[-1] = 1.0
        d = self.data.reshape(self.data.shape[:3] + (9,))
        q = np.einsum("...a,ab,...b->...", d.conj(), C.matrix, d).real
        return float(0.5 * self.box.volume * (q * w).sum())

    def residuals(self, C: ElasticTensor, mu: np.ndarray, floor: float = 1e-12):
        """Largest per-mode relative residuals of curl beta = mu and div C beta = 0.

        Denominators are ||mu_k|| and ||C|| |k| ||beta_k||, floored at ``floor``
        times their maximum over modes.
        """
        k = self.box.kvectors()
        curl = 1j * np.einsum("jkl,...k,...il->...ij", LEVI, k, self.data)
        r1 = np.linalg.norm((curl - mu).reshape(-1, 9), axis=1)
        m = np.linalg.norm(mu.reshape(-1, 9), axis=1)
        d1 = np.maximum(m, floor * max(m.max(), 1e-300))
        div = 1j * np.einsum("ijkl,...kl,...j->...i", C.entries, self.data, k)
        r2 = np.linalg.norm(div.reshape(-1, 3), axis=1)
        nb = np.linalg.norm(self.data.reshape(-1, 9), axis=1) * np.linalg.norm(k.reshape(-1, 3), axis=1)
        nb *= np.linalg.norm(C.matrix, 2)
        d2 = np.maximum(nb, floor * max(nb.max(), 1e-300))
        return float((r1 / d1).max()), float((r2 / d2).max())


def acoustic_solve(C: ElasticTensor, k: np.ndarray, rhs: np.ndarray, max_cond: float = 1e12):
    """Solve A(k) u = rhs mode by mode, A(k)_{mj} = sum C_{mijl} k_i k_l."""
    A = np.einsum("mijl,...i,...l->...mj", C.entries, k, k)
    ev = np.linalg.eigvalsh(A)
    cond = ev[..., -1] / np.maximum(ev[..., 0], 1e-300)
    if np.any(ev[..., 0] <= 0) or np.any(cond > max_cond):
        i = int(np.argmax(np.where(ev[..., 0] <= 0, np.inf, cond)))
        raise ConditioningError(f"acoustic matrix ill-conditioned at k = {k[i].tolist()}")
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def solve_periodic(C: ElasticTensor, mu: np.ndarray, box: PeriodicBox) -> FourierStrain:
    """Zero-mean periodic strain with curl beta = mu and div C beta = 0."""
    require_admissible(C)
    mask = box.active()
    k = box.kvectors()[mask]
    m = mu[mask]
    k2 = (k * k).sum(axis=-1)
    # rows: beta_p = i k x m / |k|^2 solves i k x beta_p = m when m k = 0
    bp = 1j * np.einsum("jkl,...k,...il->...ij", LEVI, k, m) / k2[:, None, None]
    rhs = np.einsum("ijkl,...j,...kl->...i", C.entries, k, bp)
    u = 1j * acoustic_solve(C, k, rhs)
    out = np.zeros(box.half_shape + (3, 3), dtype=complex)
    out[mask] = bp + 1j * u[:, :, None] * k[:, None, :]
    return FourierStrain(box, out)


def gradient_mode(box: PeriodicBox, u_hat: np.ndarray) -> FourierStrain:
    """Strain Du of the periodic displacement with coefficients u_hat (..., 3)."""
    k = box.kvectors()
    data = 1j * u_hat[..., :, None] * k[..., None, :]
    data[~box.active()] = 0.0
    return FourierStrain(box, data)


def curl_residual(values: np.ndarray, box: PeriodicBox, target: np.ndarray | None = None) -> float:
    """Spectral ||curl beta - target|| relative to ||beta|| (rowwise curl, active modes)."""
    F = box.to_fourier(values)
    k = box.kvectors()
    curl = 1j * np.einsum("jkl,...k,...il->...ij", LEVI, k, F)
    mask = box.active()
    diff = curl[mask] if target is None else curl[mask] - target[mask]
    scale = np.linalg.norm((F[mask] * np.linalg.norm(k[mask], axis=-1)[:, None, None]))
    if target is not None:
        scale = max(scale, np.linalg.norm(target[mask]))
    return float(np.linalg.norm(diff) / max(scale, 1e-300))


def smooth_gradient(box: PeriodicBox, amplitude: float = 0.1, modes=((1, 0, 0), (0, 1, 1))):
    """Deterministic smooth curl-free field Du with u built from a few low modes."""
    u = np.zeros(box.half_shape + (3,), dtype=complex)
    for c, (a, b, d) in enumerate(modes):
        u[a % box.n, b % box.n, d, c % 3] = amplitude * box.L / (2 * np.pi) * (0.5 - 0.25j)
    return gradient_mode(box, u).spatial()


# ---------------------------------------------------------------------------
# Mollification


def _bump(r):
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _gauss(r, sigma=1.0 / 3.0):
    return np.where(r < 1, np.exp(-0.5 * (r / sigma) ** 2), 0.0)


PROFILES = {"bump": _bump, "gaussian-truncated": _gauss}


@lru_cache(maxsize=8)
def mollifier_table(kind: str = "bump", xi_max: float = 512.0, points: int = 16385):
    """Cubic-spline table of phi_hat(xi) for the radial mollifier of unit mass on B_1."""
    prof = PROFILES[kind]
    x, w = np.polynomial.legendre.leggauss(1024)
    r = 0.5 * (x + 1)
    w = 0.5 * w
    pr = prof(r) * r * r * w
    mass = 4 * np.pi * pr.sum()
    xi = np.linspace(0.0, xi_max, points)
    vals = 4 * np.pi * (np.sinc(np.outer(xi, r) / np.pi) * pr).sum(axis=1) / mass
    return CubicSpline(xi, vals), xi_max


def phi_hat(xi, kind: str = "bump"):
    spline, xi_max = mollifier_table(kind)
    xi = np.asarray(xi, dtype=float)
    if np.any(xi > xi_max):
        raise ValueError(f"mollifier table covers |xi| <= {xi_max}, need {xi.max():.1f}")
    return spline(xi)


def mollify(mu: np.ndarray, box: PeriodicBox, eps: float, kind: str = "bump") -> np.ndarray:
    """Multiply each mode by phi_hat(eps |k|)."""
    if not 0 < eps < box.L / 4:
        raise ValueError("mollification radius must lie in (0, L/4)")
    if kind not in PROFILES:
        raise ValueError(f"unknown mollifier {kind!r}")
    kn = np.linalg.norm(box.kvectors(), axis=-1)
    return mu * phi_hat(eps * kn, kind)[..., None, None]


# ---------------------------------------------------------------------------
# Recovery fields, concentration and rotation fitting


def recovery_field(Q, eta, xi, eps: float, box: PeriodicBox | None = None, tol: float = 1e-8):
    """beta = Q + eps ln^(1/2)(1/eps) Q eta + eps Q xi at every sample."""
    Q = check_rotation(Q)
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if eta.shape != xi.shape or eta.shape[-2:] != (3, 3):
        raise ValueError(f"eta {eta.shape} and xi {xi.shape} must be co-sampled matrix fields")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if box is not None and np.any(eta):
        res = curl_residual(eta, box)
        if res > tol:
            raise ValueError(f"eta is not curl-free (spectral residual {res:.2e})")
    return Q + np.sqrt(np.log(1 / eps)) * eps * (Q @ eta) + eps * (Q @ xi)


def distance_to_current(points: np.ndarray, current: PolyhedralCurrent, box: PeriodicBox | None = None):
    """Exact distance to the union of segments, including periodic images if a box is given."""
    flat = points.reshape(-1, 3)
    best = np.full(len(flat), np.inf)
    shifts = [np.zeros(3)]
    if box is not None:
        r = (-1, 0, 1)
        shifts = [box.L * np.array([a, b, c], dtype=float) for a in r for b in r for c in r]
    for a, b in current.endpoints():
        for s in shifts:
            best = np.minimum(best, point_segment_distance(flat, a + s, b + s))
    return best.reshape(points.shape[:-1])


def concentration(beta: np.ndarray, gamma: PolyhedralCurrent, eps: float, C: ElasticTensor,
                  box: PeriodicBox, outer: float | None = None) -> float:
    """(1 / ln(1/eps)) * energy of the cells with eps <= dist(center, gamma) (< outer)."""
    if eps < 2 * box.spacing:
        raise ValueError(f"core radius {eps} is thinner than two grid cells")
    d = distance_to_current(box.points(), gamma, box)
    mask = d >= eps
    if outer is not None:
        mask &= d < outer
    dens = 0.5 * C.quad(beta[mask])
    return float(dens.sum() * box.spacing ** 3 / np.log(1 / eps))


def annulus_energy(beta: np.ndarray, gamma: PolyhedralCurrent, r: float, R: float, C: ElasticTensor,
                   box: PeriodicBox, subsamples: int = 4) -> float:
    """Unnormalized energy of the region r <= dist < R.

    Cells cut by either boundary surface enter with the fraction of their
    ``subsamples``^3 sub-cell centers that lie in the annulus.
    """
    if not 0 <= r < R:
        raise ValueError("need 0 <= r < R")
    pts = box.points()
    d = distance_to_current(pts, gamma, box)
    weight = ((d >= r) & (d < R)).astype(float)
    reach = 0.5 * np.sqrt(3) * box.spacing
    cut = (np.abs(d - r) < reach) | (np.abs(d - R) < reach)
    if subsamples > 1 and np.any(cut):
        off = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * box.spacing
        sub = np.stack(np.meshgrid(off, off, off, indexing="ij"), axis=-1).reshape(-1, 3)
        centers = pts[cut]
        ds = distance_to_current(centers[:, None, :] + sub[None], gamma, box)
        weight[cut] = ((ds >= r) & (ds < R)).mean(axis=1)
    dens = 0.5 * C.quad(beta)
    return float((dens * weight).sum() * box.spacing ** 3)


@dataclass
class RotationFit:
    Q: np.ndarray
    residual: float


def fit_rotation(beta: np.ndarray, mask: np.ndarray | None = None, p: float = 2.0) -> RotationFit:
    """Polar rotation of the region average of beta, with the rigidity ratio
    int Phi_p(|beta - Q|) / int Phi_p(dist(beta, SO(3)))."""
    beta = np.asarray(beta, dtype=float)
    region = beta.reshape(-1, 3, 3) if mask is None else beta[mask]
    if len(region) == 0:
        raise ValueError("empty region")
    A = region.mean(axis=0)
    if np.linalg.det(A) <= 0:
        raise ValueError("average matrix is singular or orientation reversing")
    U, _, Vt = np.linalg.svd(A)
    Q = U @ Vt
    num = phi_p(np.linalg.norm((region - Q).reshape(-1, 9), axis=1), p).sum()
    den = phi_p(np.asarray(dist_SO3(region)), p).sum()
    tiny = 1e-24 * len(region)  # roundoff level for fields on SO(3)
    if den <= tiny:
        ratio = 0.0 if num <= tiny else np.inf
    else:
        ratio = float(num / den)
    return RotationFit(Q, ratio)


# ---------------------------------------------------------------------------
# Binary field dumps

DUMP_MAGIC = b"DISLFLD\0"
DUMP_VERSION = 1
_HEADER = np.dtype([("magic", "S8"), ("version", "<u4"), ("n", "<u4"), ("L", "<f8")])


def dump_field(path, beta: np.ndarray, L: float) -> None:
    """Write magic, version, n, L, then little-endian float64 (n, n, n, 3, 3) row-major."""
    beta = np.asarray(beta, dtype=float)
    n = beta.shape[0]
    if beta.shape != (n, n, n, 3, 3):
        raise ValueError(f"expected an (n, n, n, 3, 3) field, got {beta.shape}")
    head = np.array([(DUMP_MAGIC, DUMP_VERSION, n, L)], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(np.ascontiguousarray(beta, dtype="<f8").tobytes())


def load_field(path):
    """Inverse of ``dump_field``: returns (beta, L)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise ValueError("file too short for a field header")
    head = np.frombuffer(raw[:_HEADER.itemsize], dtype=_HEADER)[0]
    if head["magic"] != DUMP_MAGIC.rstrip(b"\0") and head["magic"] != DUMP_MAGIC:
        raise ValueError("not a field dump (bad magic)")
    if head["version"] != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {head['version']}")
    n = int(head["n"])
    data = np.frombuffer(raw[_HEADER.itemsize:], dtype="<f8")
    if data.size != n ** 3 * 9:
        raise ValueError("payload size does not match the header")
    return data.reshape(n, n, n, 3, 3).astype(float), float(head["L"])
