"""Rescaled semi-discrete energies, the limit functional, and epsilon sweeps.

All energies are integrals over the periodic box of W(beta), W from the
mixed-growth model, rescaled by 1 / (eps^2 ln(1/eps)).  For ``finite`` kinematics
beta is a deformation gradient near SO(3); for ``linear`` kinematics it is a
displacement gradient near 0.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .elasticity import (ElasticTensor, MixedGrowth, check_rotation, density, linearized_tensor,
                         mixed_growth, rotate, tensor_from_dict)
from .fields import (PeriodicBox, curl_residual, distance_to_current, mollify, mu_hat,
                     periodic_line, recovery_field, smooth_gradient, solve_periodic)
from .geometry import Box
from .linetension import psi
from .network import BravaisLattice, PolyhedralCurrent, check_dilute, current_from_dict

VARIANTS = ("subcritical-mixed-growth", "core-cutoff", "mollified")


class AdmissibilityError(ValueError):
    pass


@dataclass
class EnergyReport:
    variant: str
    eps: float
    rho_eps: float
    raw: float
    rescaled: float
    dilute: bool | None
    limit: float | None = None
    gap: float | None = None

    def with_limit(self, limit: float):
        self.limit = limit
        self.gap = abs(self.rescaled - limit) / limit if limit > 0 else abs(self.rescaled - limit)
        return self

    def as_dict(self):
        return asdict(self)


def _check_eps(eps):
    if not 0 < eps < np.exp(-1):
        raise ValueError("eps must lie in (0, 1/e)")


def _reference(kinematics):
    if kinematics == "finite":
        return np.eye(3)
    if kinematics == "linear":
        return np.zeros((3, 3))
    raise ValueError(f"unknown kinematics {kinematics!r}")


def check_admissible(beta, target_hat, box: PeriodicBox, tol: float = 1e-6) -> float:
    """Spectral residual of curl beta = target (active modes)."""
    res = curl_residual(beta, box, target_hat)
    if res > tol:
        raise AdmissibilityError(f"curl beta does not match the dislocation measure (residual {res:.2e})")
    return res


def _energy(beta, mg, kinematics, box, mask=None):
    W = density(kinematics)
    vals = beta if mask is None else beta[mask]
    return float(np.sum(W(vals, mg)) * box.spacing ** 3)


def _dilute(mu, box: PeriodicBox, diluteness):
    if diluteness is None:
        return None
    h, alpha = diluteness
    return check_dilute(mu, h, alpha, Box.cube(box.L)).passed


def f_eps_subcr(beta, mu: PolyhedralCurrent, eps: float, mg: MixedGrowth, kinematics: str,
                box: PeriodicBox, diluteness=None, tol: float = 1e-6) -> EnergyReport:
    """Rescaled energy over the whole box; mu carries the scale eps."""
    _check_eps(eps)
    check_admissible(beta, mu_hat(mu, box), box, tol)
    raw = _energy(beta, mg, kinematics, box)
    return EnergyReport(VARIANTS[0], eps, 0.0, raw, raw / (eps ** 2 * np.log(1 / eps)),
                        _dilute(mu, box, diluteness))


def f_eps_core(beta, mu: PolyhedralCurrent, eps: float, rho_eps: float, mg: MixedGrowth,
               kinematics: str, box: PeriodicBox, diluteness=None, tol: float = 1e-6) -> EnergyReport:
    """Rescaled energy outside the rho_eps-neighbourhood of the support of mu."""
    _check_eps(eps)
    if rho_eps < eps:
        raise ValueError("core radius must be at least eps")
    if len(mu) and rho_eps < 2 * box.spacing:
        raise ValueError(f"core radius {rho_eps} is thinner than two grid cells")
    check_admissible(beta, mu_hat(mu, box), box, tol)
    mask = distance_to_current(box.points(), mu, box) >= rho_eps
    raw = _energy(beta, mg, kinematics, box, mask)
    return EnergyReport(VARIANTS[1], eps, rho_eps, raw, raw / (eps ** 2 * np.log(1 / eps)),
                        _dilute(mu, box, diluteness))


def f_eps_moll(beta, mu: PolyhedralCurrent, eps: float, mg: MixedGrowth, kinematics: str,
               box: PeriodicBox, kind: str = "bump", diluteness=None, tol: float = 1e-6) -> EnergyReport:
    """Rescaled energy over the box; curl beta must equal the eps-mollified measure."""
    _check_eps(eps)
    check_admissible(beta, mollify(mu_hat(mu, box), box, eps, kind), box, tol)
    raw = _energy(beta, mg, kinematics, box)
    return EnergyReport(VARIANTS[2], eps, 0.0, raw, raw / (eps ** 2 * np.log(1 / eps)),
                        _dilute(mu, box, diluteness))


def f_limit(mu: PolyhedralCurrent, eta, Q, C: ElasticTensor, box: PeriodicBox, use_rel: bool = False,
            kinematics: str = "finite", lattice: BravaisLattice | None = None, caps=None,
            modes: int = 64, tol: float = 1e-8) -> float:
    """int 1/2 C_Q eta . eta + sum_i psi(theta_i, Q tau_i) length_i (psi_rel upper if use_rel).

    With linear kinematics Q is ignored: the bulk term uses C and the line term psi(theta, tau).
    """
    Q = np.eye(3) if kinematics == "linear" else check_rotation(Q)
    eta = np.asarray(eta, dtype=float)
    bulk = 0.0
    if np.any(eta):
        res = curl_residual(eta, box)
        if res > tol:
            raise ValueError(f"eta is not curl-free (spectral residual {res:.2e})")
        bulk = float(0.5 * rotate(C, Q).quad(eta).sum() * box.spacing ** 3)
    line = 0.0
    for theta, tau, ell in zip(mu.theta, mu.tau, mu.lengths):
        if not np.any(theta):
            continue
        if use_rel:
            from .relaxation import Caps, psi_rel_upper
            lat = mu.lattice if lattice is None else lattice
            if lat is None:
                raise ValueError("the relaxed density needs a lattice")
            val = psi_rel_upper(C, theta, Q @ tau, lat, caps or Caps()).value
        else:
            val = psi(C, theta, Q @ tau, modes)
        line += val * ell
    return bulk + line


# ---------------------------------------------------------------------------
# Epsilon sweeps

CONFIG_KEYS = {"tensor", "lattice", "current", "line", "box", "kinematics", "p", "eps_grid",
               "rho_rule", "use_rel", "eta", "rotation", "mollifier", "diluteness", "modes"}


@dataclass
class GammaConfig:
    C: ElasticTensor
    current: PolyhedralCurrent
    box: PeriodicBox
    kinematics: str
    mg: MixedGrowth
    eps_grid: list
    rho_factor: float
    rho_power: float
    use_rel: bool
    eta: np.ndarray
    Q: np.ndarray
    mollifier: str
    dilute_power: float
    lattice: BravaisLattice | None
    modes: int

    def rho(self, eps):
        return self.rho_factor * eps ** self.rho_power

    def diluteness(self, eps):
        h = np.log(1 / eps) ** (-self.dilute_power)
        return h, h


def parse_config(doc: dict) -> GammaConfig:
    """Validate a gamma-table configuration (see docs/SCHEMAS.md)."""
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kin = doc.get("kinematics", "finite")
    C_model = linearized_tensor(kin)
    if "tensor" in doc:
        C = tensor_from_dict(doc["tensor"])
        if not C.allclose(C_model, 1e-10):
            raise ValueError("tensor must be the linearization of the mixed-growth density")
    C = C_model
    bx = doc.get("box", {"L": 1.0, "n": 128})
    if set(bx) - {"L", "n"}:
        raise ValueError("box takes only L and n")
    box = PeriodicBox(float(bx.get("L", 1.0)), int(bx.get("n", 128)))
    lattice = BravaisLattice(np.array(doc["lattice"], dtype=float)) if "lattice" in doc else None
    if "current" in doc and "line" in doc:
        raise ValueError("give either current or line")
    if "current" in doc:
        current = current_from_dict(doc["current"])
    else:
        ln = doc.get("line", {"b": [0.0, 0.0, 1.0]})
        if set(ln) - {"b", "axis", "through"}:
            raise ValueError("line takes b, axis and through")
        current = periodic_line(box, ln["b"], int(ln.get("axis", 2)), tuple(ln.get("through", (0.5, 0.5))))
    if current.eps != 1.0:
        raise ValueError("the configured current is the limit measure and must have eps = 1")
    p = float(doc.get("p", 1.5))
    eps_grid = [float(e) for e in doc.get("eps_grid", [box.L / 8, box.L / 16, box.L / 32, box.L / 64])]
    for e in eps_grid:
        _check_eps(e)
    rr = doc.get("rho_rule", {"factor": 1.0, "power": 1.0})
    if set(rr) - {"factor", "power"}:
        raise ValueError("rho_rule takes factor and power")
    rho_factor, rho_power = float(rr.get("factor", 1.0)), float(rr.get("power", 1.0))
    if rho_factor < 1 or not 0 < rho_power <= 1:
        raise ValueError("rho_rule must give rho_eps >= eps (factor >= 1, 0 < power <= 1)")
    et = doc.get("eta", {"kind": "zero"})
    if et.get("kind") == "zero":
        eta = np.zeros((box.n,) * 3 + (3, 3))
    elif et.get("kind") == "smooth":
        eta = smooth_gradient(box, float(et.get("amplitude", 0.1)))
    else:
        raise ValueError("eta kind must be zero or smooth")
    Q = check_rotation(np.array(doc.get("rotation", np.eye(3)), dtype=float))
    if kin == "linear" and not np.allclose(Q, np.eye(3)):
        raise ValueError("linear kinematics has no rotation")
    dl = doc.get("diluteness", {"power": 0.5})
    return GammaConfig(C, current, box, kin, mixed_growth(p), eps_grid, rho_factor, rho_power,
                       bool(doc.get("use_rel", False)), eta, Q, doc.get("mollifier", "bump"),
                       float(dl.get("power", 0.5)), lattice, int(doc.get("modes", 64)))


def gamma_table(config) -> tuple[list[EnergyReport], dict]:
    """Recovery fields and all three rescaled energies for every eps in the grid."""
    cfg = config if isinstance(config, GammaConfig) else parse_config(config)
    box, Q, kin = cfg.box, cfg.Q, cfg.kinematics
    CQ = rotate(cfg.C, Q)
    limit = f_limit(cfg.current, cfg.eta, Q, cfg.C, box, cfg.use_rel, kin, cfg.lattice, modes=cfg.modes)
    mu1 = mu_hat(cfg.current, box)
    # xi solves curl xi = Q^T mu and div C_Q xi = 0
    rot_mu = np.einsum("ai,...aj->...ij", Q, mu1)
    xi = solve_periodic(CQ, rot_mu, box).spatial()
    ref = _reference(kin)
    rows = []
    for eps in cfg.eps_grid:
        mu_e = cfg.current.scaled(eps)
        dil = cfg.diluteness(eps)
        beta = recovery_field(Q, cfg.eta, xi, eps) - np.eye(3) + ref
        rows.append(f_eps_subcr(beta, mu_e, eps, cfg.mg, kin, box, dil).with_limit(limit))
        rho = max(cfg.rho(eps), eps)
        rows.append(f_eps_core(beta, mu_e, eps, rho, cfg.mg, kin, box, dil).with_limit(limit))
        del beta
        xm = solve_periodic(CQ, mollify(rot_mu, box, eps, cfg.mollifier), box).spatial()
        beta = recovery_field(Q, cfg.eta, xm, eps) - np.eye(3) + ref
        del xm
        rows.append(f_eps_moll(beta, mu_e, eps, cfg.mg, kin, box, cfg.mollifier, dil).with_limit(limit))
        del beta
    summary = summarize(rows, limit)
    summary.update({"n": box.n, "L": box.L, "kinematics": kin, "p": cfg.mg.p})
    return rows, summary


def summarize(rows, limit):
    eps_vals = sorted({r.eps for r in rows}, reverse=True)
    by_eps = {e: [r for r in rows if r.eps == e] for e in eps_vals}
    spread = {}
    for e, rs in by_eps.items():
        v = [r.rescaled for r in rs]
        spread[e] = (max(v) - min(v)) / max(np.mean(v), 1e-300)
    gaps = {v: [r.gap for e in eps_vals for r in by_eps[e] if r.variant == v] for v in VARIANTS}
    return {"limit": limit, "eps": eps_vals,
            "spread": [spread[e] for e in eps_vals],
            "gaps": gaps,
            "gaps_decreasing": {v: bool(np.all(np.diff(g) < 0)) for v, g in gaps.items()}}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    fields = ["variant", "eps", "rho_eps", "raw", "rescaled", "dilute", "limit", "gap"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: getattr(r, k) for k in fields})
    return buf.getvalue()
