"""Command-line frontend: structure-file ingestion, subcommand dispatch,
deterministic record emission.

Records go to stdout (or --output) as JSON lines with floats printed to
15 significant digits, or as flat CSV with --format csv.  Exit codes:
0 success, 1 usage/input errors, 2 domain errors (non-convergence,
domain exit, undetermined signs), reported with their residuals.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import expansion, genfun, graphs, realization, structures, trees, triangles
from .errors import GroupoidGenError
from .flows import OdeConfig
from .genfun import GenfunConfig, GenfunPoint
from .poisson import load_structure
from .realization import NewtonConfig
from .triangles import TriangleConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.15g}"
    if isinstance(value, np.ndarray):
        return _fmt(value.tolist())
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}:{_fmt(v)}" for k, v in value.items())
        return "{" + ",".join(items) + "}"
    if value is None:
        return "null"
    return json.dumps(value)


def _flatten(prefix, value, out):
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _flatten(f"{prefix}_{i}", v, out)
    elif isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}_{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = value


def _emit(records, args):
    lines = []
    if args.format == "json":
        for rec in records:
            lines.append(_fmt(rec))
    else:
        flat = []
        for rec in records:
            row = {}
            _flatten("", rec, row)
            flat.append(row)
        keys = sorted({k for row in flat for k in row})
        lines.append(",".join(keys))
        for row in flat:
            lines.append(",".join(
                _fmt(row.get(k, "")) if not isinstance(row.get(k), str)
                else row[k] for k in keys))
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _vector(text):
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _vector_list(text):
    return [_vector(part) for part in text.split(";")]


def _structure(args):
    path = args.structure
    if path.startswith("builtin:"):
        return structures.by_name(path.split(":", 1)[1])
    return load_structure(path)


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GENFUN_SEED")
    return int(env) if env else None


def _genfun_config(args):
    kw = {}
    if args.germ_radius is not None:
        kw["germ_radius"] = args.germ_radius
    if args.newton_tol is not None:
        kw["newton_tol"] = args.newton_tol
    if args.ode_steps is not None:
        kw["steps_outer"] = args.ode_steps
        kw["steps_inner"] = args.ode_steps
    return GenfunConfig(**kw)


def _add_common(sp, structure=True):
    sp.add_argument("--output", help="write records to this path")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--germ-radius", type=float, default=None)
    sp.add_argument("--ode-steps", type=int, default=None)
    sp.add_argument("--newton-tol", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None,
                    help="probe seed (or GENFUN_SEED env)")
    if structure:
        sp.add_argument("--structure", required=True,
                        help="structure JSON path or builtin:<name>")


def cmd_alpha(args):
    P = _structure(args)
    kw = {}
    if args.germ_radius is not None:
        kw["germ_radius"] = args.germ_radius
    if args.newton_tol is not None:
        kw["config"] = NewtonConfig(tol=args.newton_tol)
    if args.ode_steps is not None:
        kw["ode"] = OdeConfig(steps=args.ode_steps)
    a = realization.alpha(P, _vector(args.x), _vector(args.p), **kw)
    b = realization.beta(P, _vector(args.x), _vector(args.p), **kw)
    return [{"alpha": a, "beta": b}], 0


def cmd_genfun(args):
    P = _structure(args)
    cfg = _genfun_config(args)
    g = GenfunPoint(_vector(args.p1), _vector(args.p2), _vector(args.x))
    S = genfun.genfun_S(P, g, config=cfg)
    rec = {"S": S}
    if args.derivatives:
        dp1, dp2, dx = genfun.dS(P, g, config=cfg)
        rec.update({"dS_dp1": dp1, "dS_dp2": dp2, "dS_dx": dx})
    return [rec], 0


def cmd_sga(args):
    P = _structure(args)
    cfg = _genfun_config(args)
    rep = genfun.sga_residual(P, _vector(args.p1), _vector(args.p2),
                              _vector(args.p3), _vector(args.x), config=cfg)
    rec = {"residual": float(rep.residual), "lhs": float(rep.lhs),
           "rhs": float(rep.rhs), "iterations": rep.iterations,
           "xbar": rep.xbar, "pbar": rep.pbar,
           "xtilde": rep.xtilde, "ptilde": rep.ptilde}
    return [rec], (0 if float(rep.residual) < args.tol else 2)


def cmd_taylor(args):
    P = _structure(args)
    cfg = _genfun_config(args)
    fit = expansion.taylor_coeffs_S(P, _vector(args.p1), _vector(args.p2),
                                    _vector(args.x), args.order,
                                    t_radius=args.t_radius, config=cfg)
    return [{"coefficients": fit.coefficients, "residual": fit.residual,
             "t_radius": fit.t_radius, "nodes": fit.nodes,
             "diagnostics": fit.diagnostics, "reliable": fit.reliable}], 0


def cmd_trees(args):
    ts = trees.enumerate_trees(args.n)
    rec = {"n": args.n, "count": len(ts)}
    if args.list:
        rec["trees"] = [t.serialize() for t in ts]
        rec["sigma"] = [trees.sigma(t) for t in ts]
        rec["factorial"] = [trees.tree_factorial(t) for t in ts]
    return [rec], 0


def cmd_kgraph(args):
    P = _structure(args)
    graph = graphs.load_graph(args.graph)
    p_list = _vector_list(args.p)
    val = graphs.kgraph_symbol(graph, P, p_list, _vector(args.x))
    return [{"symbol": val}], 0


def cmd_network(args):
    net = graphs.load_network(args.network)
    probes = None
    seed = _seed(args)
    if seed is not None:
        probes = graphs._default_probes(seed=seed)
    graph, sign = graphs.network_to_kgraph(net, probes=probes)
    return [{"graph": graph.to_json(), "sign": sign}], 0


def cmd_bch(args):
    P = _structure(args)
    if "structure_constants" not in P._cache:
        raise ValueError("bch requires a linear structure file with "
                         "structure_constants")
    c = P._cache["structure_constants"]
    out = expansion.bch_numeric(c, _vector(args.p1), _vector(args.p2),
                                K=args.order)
    return [{"bch": out}], 0


def _triangle_config(args):
    kw = {}
    if args.germ_radius is not None:
        kw["germ_radius"] = args.germ_radius
        kw["genfun"] = GenfunConfig(germ_radius=args.germ_radius)
    if args.samples is not None:
        kw["n_samples"] = args.samples
    return TriangleConfig(**kw)


def cmd_triangle(args):
    P = _structure(args)
    cfg = _triangle_config(args)
    T = triangles.build_triangle(P, _vector(args.p1), _vector(args.p2),
                                 _vector(args.x), config=cfg)
    rep = triangles.triangle_boundary_check(P, T)
    if args.field_csv:
        fld = triangles.triangle_field(P, T, grid_n=args.grid_n)
        triangles.field_to_csv(fld, args.field_csv)
    rec = {"y": T.y, "p3": T.p3, "corner_r": rep.corner_r,
           "edge1": rep.edge1, "edge2": rep.edge2, "edge3": rep.edge3,
           "base_x": rep.base_x, "max_residual": rep.max_residual}
    return [rec], 0


def cmd_psm(args):
    P = _structure(args)
    cfg = _triangle_config(args)
    T = triangles.build_triangle(P, _vector(args.p1), _vector(args.p2),
                                 _vector(args.x), config=cfg)
    action = triangles.psm_action(P, T, grid_n=args.grid_n)
    S = genfun.genfun_S(P, T.generator, config=cfg.genfun)
    return [{"action": action, "S": S, "difference": abs(action - S)}], 0


def build_parser():
    parser = _Parser(prog="groupoidgen",
                     description="numerical local symplectic groupoids")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("alpha", help="realization map")
    _add_common(sp)
    sp.add_argument("--x", required=True)
    sp.add_argument("--p", required=True)
    sp.set_defaults(func=cmd_alpha)

    sp = sub.add_parser("genfun", help="generating function value")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--derivatives", action="store_true")
    sp.set_defaults(func=cmd_genfun)

    sp = sub.add_parser("sga", help="associativity residual")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--p3", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_sga)

    sp = sub.add_parser("taylor", help="structure-scale Taylor coefficients")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--order", type=int, default=2)
    sp.add_argument("--t-radius", type=float, default=0.3)
    sp.set_defaults(func=cmd_taylor)

    sp = sub.add_parser("trees", help="rooted tree enumeration")
    _add_common(sp, structure=False)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--list", action="store_true")
    sp.set_defaults(func=cmd_trees)

    sp = sub.add_parser("kgraph-symbol", help="Kontsevich graph symbol")
    _add_common(sp)
    sp.add_argument("--graph", required=True, help="graph JSON path")
    sp.add_argument("--p", required=True,
                    help="terrestrial covectors, e.g. '1,0;0,1'")
    sp.add_argument("--x", required=True)
    sp.set_defaults(func=cmd_kgraph)

    sp = sub.add_parser("network-map", help="network to Kontsevich graph")
    _add_common(sp, structure=False)
    sp.add_argument("--network", required=True, help="network JSON path")
    sp.set_defaults(func=cmd_network)

    sp = sub.add_parser("bch", help="numerical BCH product")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--order", type=int, default=12)
    sp.set_defaults(func=cmd_bch)

    sp = sub.add_parser("triangle", help="build and check a triangle")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--grid-n", type=int, default=32)
    sp.add_argument("--field-csv", help="emit the (t,s,X,eta) grid here")
    sp.set_defaults(func=cmd_triangle)

    sp = sub.add_parser("psm", help="sigma-model action vs S")
    _add_common(sp)
    sp.add_argument("--p1", required=True)
    sp.add_argument("--p2", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--grid-n", type=int, default=32)
    sp.set_defaults(func=cmd_psm)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 1
    try:
        records, code = args.func(args)
    except GroupoidGenError as exc:
        extra = getattr(exc, "residual", None)
        detail = f" (residual {extra:.6g})" if isinstance(extra, float) else ""
        sys.stderr.write(f"groupoidgen: {exc}{detail}\n")
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"groupoidgen: {exc}\n")
        return 1
    _emit(records, args)
    return code


if __name__ == "__main__":
    sys.exit(main())
