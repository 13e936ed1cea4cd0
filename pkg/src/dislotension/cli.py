"""Command-line front end.

Structured inputs and outputs are JSON, sweep tables are CSV.  Exit codes: 0 on
success, 2 on invalid input (error JSON on stderr), 64 for an unknown subcommand.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

SCHEMA_VERSION = 1
COMMANDS = ("psi", "psi-rel", "profile", "cell", "solve-field", "concentrate", "check-network",
            "gamma-table")
EXIT_USAGE = 2
EXIT_UNKNOWN = 64
THREADS_ENV = "DISLOTENSION_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _vector(text):
    try:
        v = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if len(v) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 components, got {len(v)}")
    return np.array(v)


def _floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dislotension", description="Line-tension energies of dislocations.")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"cap on worker threads (default: ${THREADS_ENV} or the library default)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp, out_help="output file (default: stdout)"):
        sp.add_argument("--output", "-o", default=None, help=out_help)

    s = sub.add_parser("psi", help="line-tension energy psi(b, t)")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--b", type=_vector, required=True, help="Burgers vector, e.g. 0,0,1")
    s.add_argument("--t", type=_vector, required=True, help="unit line direction")
    s.add_argument("--modes", type=_positive_int, default=64, help="Fourier modes M (default 64)")
    s.add_argument("--nq", type=_positive_int, default=None, help="angular quadrature points (default 4M+4)")
    common(s)

    s = sub.add_parser("psi-rel", help="upper estimate of the relaxed line tension")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--lattice", default=None, help='lattice JSON {"F": 3x3} (default: cubic, unit spacing)')
    s.add_argument("--b", type=_vector, required=True, help="lattice Burgers vector")
    s.add_argument("--t", type=_vector, required=True, help="unit line direction")
    s.add_argument("--norm-cap", type=float, default=2.0, help="largest |b_i| (default 2)")
    s.add_argument("--count-cap", type=_positive_int, default=3, help="largest sum of multiplicities (default 3)")
    s.add_argument("--spacing", type=float, default=0.125, help="routing lattice spacing (default 1/8)")
    s.add_argument("--modes", type=_positive_int, default=32, help="Fourier modes for edge costs (default 32)")
    common(s)

    s = sub.add_parser("profile", help="angular profile f(theta), g of a straight dislocation")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--b", type=_vector, required=True, help="Burgers vector")
    s.add_argument("--t", type=_vector, required=True, help="unit line direction")
    s.add_argument("--modes", type=_positive_int, default=64, help="Fourier modes M (default 64)")
    s.add_argument("--samples", type=_positive_int, default=64, help="angles at which f is tabulated (default 64)")
    common(s)

    s = sub.add_parser("cell", help="hollow-cylinder cell problem sweep (CSV)")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--b", type=_vector, required=True, help="Burgers vector")
    s.add_argument("--t", type=_vector, required=True, help="unit line direction")
    s.add_argument("--ratios", type=_floats, default=[2.0 ** -k for k in range(2, 11)],
                   help="comma-separated r/R values (default 2^-2..2^-10)")
    s.add_argument("--R", type=float, default=1.0, help="outer radius (default 1)")
    s.add_argument("--per-unit-log", type=float, default=4.0, help="radial cells per unit of ln(R/r) (default 4)")
    s.add_argument("--n-theta", type=_positive_int, default=32, help="angular nodes (default 32)")
    s.add_argument("--n-z", type=_positive_int, default=8, help="axial nodes (default 8)")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="table format (default csv)")
    common(s)

    s = sub.add_parser("solve-field", help="periodic spectral strain of a current (binary dump)")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--current", required=True, help="current JSON file")
    s.add_argument("--L", type=float, default=1.0, help="box side (default 1)")
    s.add_argument("--n", type=_positive_int, default=64, help="grid points per side, power of two >= 16 (default 64)")
    s.add_argument("--mollify", type=float, default=None, help="mollification radius eps (default: none)")
    s.add_argument("--mollifier", choices=("bump", "gaussian-truncated"), default="bump",
                   help="mollifier profile (default bump)")
    s.add_argument("--dump", required=True, help="binary field dump path")
    common(s, "summary JSON file (default: stdout)")

    s = sub.add_parser("concentrate", help="core-excluded energy concentration sweep (CSV)")
    s.add_argument("--tensor", required=True, help="elastic tensor JSON file")
    s.add_argument("--current", required=True, help="current JSON file")
    s.add_argument("--L", type=float, default=1.0, help="box side (default 1)")
    s.add_argument("--n", type=_positive_int, default=128, help="grid points per side (default 128)")
    s.add_argument("--eps", type=_floats, default=None, help="comma-separated core radii (default L/8..L/64)")
    s.add_argument("--mollifier", choices=("none", "bump", "gaussian-truncated"), default="none",
                   help="mollify the measure at each eps (default none)")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="table format (default csv)")
    common(s)

    s = sub.add_parser("check-network", help="divergence, lattice, diluteness and transversality report")
    s.add_argument("--current", required=True, help="current JSON file")
    s.add_argument("--h", type=float, required=True, help="diluteness length h")
    s.add_argument("--alpha", type=float, required=True, help="diluteness angle/separation factor alpha")
    s.add_argument("--box", type=_floats, default=None,
                   help="lo_x,lo_y,lo_z,hi_x,hi_y,hi_z (default: unit cube)")
    common(s)

    s = sub.add_parser("gamma-table", help="epsilon sweep of the regularized energies (CSV)")
    s.add_argument("--config", required=True, help="gamma-table JSON config")
    s.add_argument("--summary", default=None, help="also write the summary JSON to this file")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="table format (default csv)")
    common(s)
    return p


# ---------------------------------------------------------------------------
# helpers


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed JSON ({e})")


def _load_tensor(path):
    from .elasticity import tensor_from_dict
    return tensor_from_dict(_load_json(path))


def _load_current(path):
    from .network import current_from_dict
    return current_from_dict(_load_json(path))


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _json(doc):
    return json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _table(rows, fields, fmt):
    if fmt == "json":
        return _json({"rows": [dict(zip(fields, r)) for r in rows]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    w.writerows(rows)
    return buf.getvalue()


def _apply_threads(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# commands


def cmd_psi(a):
    from .linetension import solve_profile
    C = _load_tensor(a.tensor)
    prof = solve_profile(C, a.b, a.t, a.modes, a.nq)
    history = [{"modes": m, "psi": solve_profile(C, a.b, a.t, m).psi}
               for m in (a.modes // 4, a.modes // 2) if m >= 1]
    history.append({"modes": a.modes, "psi": prof.psi})
    _emit(_json({"psi": prof.psi, "b": a.b, "t": a.t, "modes": a.modes, "nq": prof.nq,
                 "null_space_dim": prof.null_space_dim, "coefficient_tail": prof.coefficient_tail,
                 "convergence_history": history}),
          a.output)


def cmd_psi_rel(a):
    from .network import BravaisLattice
    from .relaxation import Caps, RoutingGraph, psi_rel_upper
    C = _load_tensor(a.tensor)
    lat = BravaisLattice.cubic()
    if a.lattice:
        doc = _load_json(a.lattice)
        if set(doc) - {"F"}:
            raise ValueError("lattice JSON takes only F")
        lat = BravaisLattice(np.array(doc["F"], dtype=float))
    if a.spacing <= 0 or a.spacing > 0.5:
        raise ValueError("spacing must lie in (0, 1/2]")
    graph = RoutingGraph(a.t, a.spacing)
    est = psi_rel_upper(C, a.b, a.t, lat, Caps(a.norm_cap, a.count_cap), graph=graph, modes=a.modes)
    _emit(_json(est.as_dict(lat, graph)), a.output)


def cmd_profile(a):
    from .linetension import solve_profile
    C = _load_tensor(a.tensor)
    prof = solve_profile(C, a.b, a.t, a.modes)
    th = 2 * np.pi * np.arange(a.samples) / a.samples
    _emit(_json({"psi": prof.psi, "b": a.b, "t": a.t, "Q": prof.Q, "g": prof.g, "a0": prof.a0,
                 "a": prof.a, "c": prof.c, "theta": th, "f": prof.f(th)}), a.output)


def cmd_cell(a):
    from .cellproblem import CylGrid, infcyl
    from .linetension import solve_profile
    C = _load_tensor(a.tensor)
    prof = solve_profile(C, a.b, a.t, 32)
    rows = []
    for q in a.ratios:
        if not 0 < q <= 0.5:
            raise ValueError("every ratio r/R must lie in (0, 1/2]")
        grid = CylGrid.for_ratio(1 / q, a.per_unit_log, a.n_theta, a.n_z)
        res = infcyl(C, a.b, a.t, a.R, a.R, q * a.R, grid, profile=prof)
        gap = 1 - res.value / res.psi if res.psi > 0 else 0.0
        rows.append((q, res.value, res.psi, gap, res.iterations))
    _emit(_table(rows, ["r_over_R", "value", "psi", "gap", "iterations"], a.format), a.output)


def _box_and_mu(a):
    from .fields import PeriodicBox, mu_hat
    box = PeriodicBox(a.L, a.n)
    cur = _load_current(a.current)
    return box, cur, mu_hat(cur, box)


def cmd_solve_field(a):
    from .fields import dump_field, mollify, solve_periodic
    C = _load_tensor(a.tensor)
    box, cur, mu = _box_and_mu(a)
    if a.mollify is not None:
        mu = mollify(mu, box, a.mollify, a.mollifier)
    sol = solve_periodic(C, mu, box)
    r_curl, r_div = sol.residuals(C, mu)
    beta = sol.spatial()
    dump_field(a.dump, beta, box.L)
    _emit(_json({"dump": a.dump, "n": box.n, "L": box.L, "energy": sol.energy(C),
                 "curl_residual": r_curl, "div_residual": r_div,
                 "max_abs": float(np.abs(beta).max())}), a.output)


def cmd_concentrate(a):
    from .fields import concentration, mollify, solve_periodic
    from .linetension import psi
    C = _load_tensor(a.tensor)
    box, cur, mu = _box_and_mu(a)
    eps_list = a.eps or [box.L / q for q in (8, 16, 32, 64)]
    ref = sum(psi(C, th, tau) * ell for th, tau, ell in zip(cur.theta, cur.tau, cur.lengths) if np.any(th))
    length = float(cur.lengths.sum())
    base = None if a.mollifier != "none" else solve_periodic(C, mu, box).spatial()
    rows = []
    for eps in eps_list:
        beta = base if base is not None else solve_periodic(C, mollify(mu, box, eps, a.mollifier), box).spatial()
        nu = concentration(beta, cur, eps, C, box)
        rows.append((eps, nu, ref, abs(nu - ref) / length if length else 0.0))
    _emit(_table(rows, ["eps", "nu_eps", "psi_times_length", "gap"], a.format), a.output)


def cmd_check_network(a):
    from .geometry import Box, transversal
    from .network import check_dilute, check_divergence_free, check_lattice
    cur = _load_current(a.current)
    if a.box is None:
        box = Box.cube(1.0)
    elif len(a.box) == 6:
        box = Box(a.box[:3], a.box[3:])
    else:
        raise ValueError("--box takes six numbers")
    out = {"divergence_free": check_divergence_free(cur, box).as_dict(),
           "dilute": check_dilute(cur, a.h, a.alpha, box).as_dict(),
           "transversal": transversal(cur, box).as_dict()}
    if cur.lattice is not None:
        out["lattice"] = check_lattice(cur, cur.lattice).as_dict()
    _emit(_json(out), a.output)


def cmd_gamma_table(a):
    from .limits import gamma_table, rows_to_csv
    rows, summary = gamma_table(_load_json(a.config))
    if a.format == "json":
        _emit(_json({"rows": [r.as_dict() for r in rows], "summary": summary}), a.output)
    else:
        _emit(rows_to_csv(rows), a.output)
    if a.summary:
        with open(a.summary, "w") as fh:
            fh.write(_json({"summary": {str(k): v for k, v in summary.items()}}))


HANDLERS = {"psi": cmd_psi, "psi-rel": cmd_psi_rel, "profile": cmd_profile, "cell": cmd_cell,
            "solve-field": cmd_solve_field, "concentrate": cmd_concentrate,
            "check-network": cmd_check_network, "gamma-table": cmd_gamma_table}


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _first_command(argv):
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--threads":
            i += 2
            continue
        if tok.startswith("-"):
            i += 1
            continue
        return tok
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    cmd = _first_command(argv)
    if cmd is not None and cmd not in COMMANDS:
        return _fail("unknown_command", f"unknown subcommand {cmd!r}; choose from {', '.join(COMMANDS)}",
                     EXIT_UNKNOWN)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    _apply_threads(args.threads)
    try:
        HANDLERS[args.command](args)
    except (ValueError, KeyError, TypeError, RuntimeError, OSError) as e:
        return _fail(type(e).__name__, str(e), EXIT_USAGE)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
