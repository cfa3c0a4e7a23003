"""Command-line front end: graph, soliton, solve, mplevel, sweep, verify."""

from __future__ import annotations

import argparse
import concurrent.futures as cfut
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import closed_forms as cf
from .discretization import Mesh, energy, load_csv, norms, save_csv
from .errors import ConfigurationError, GraphNLSError, InvalidParameter, OutOfRegime
from .metric_graph import build_standard, classify, load_graph, min_edge_length, save_graph
from .mountain_pass import (MPConfig, auto_path, canonical_line_path, check_endpoints,
                            edge_supported_path, minmax_relax, path_max_energy, pendant_path,
                            signpost_path)
from .solver import (SolverConfig, explicit_even_halfline_solution, gradient_flow_normalized,
                     newton_constrained, nehari_minimize, soliton_seed)
from . import verification as vf


# --- serialization ---------------------------------------------------------------

def fmt(x):
    return format(float(x), ".17g")


def to_json(obj, indent=0, compact=False):
    """JSON text with every float written to 17 significant digits."""
    nl, pad, end = ("", "", "") if compact else ("\n", "  " * (indent + 1), "  " * indent)
    sub = lambda v: to_json(v, indent + 1, compact)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else json.dumps(str(x))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {sub(v)}" for k, v in obj.items()]
        return "{" + nl + ("," + nl).join(items) + nl + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(sub(v) for v in obj) + "]"
    return json.dumps(str(obj))


@dataclass
class RunManifest:
    command_line: list
    graph_file_hash: str | None = None
    mesh: dict = field(default_factory=dict)
    solver_config: dict = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    rng_seed: int = 0


def _hash(path):
    if not path:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(prefix, suffix, text):
    if prefix in (None, "-"):
        sys.stdout.write(text)
        return None
    out = Path(f"{prefix}{suffix}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    return str(out)


# --- helpers ----------------------------------------------------------------------------

def _graph(args):
    return load_graph(args.graph)


def _solver_cfg(args):
    cfg = SolverConfig(seed=args.seed_rng)
    if getattr(args, "tol", None):
        cfg.tol_residual = args.tol
    return cfg


def _mp_cfg(args, p):
    kw = dict(p=p)
    if getattr(args, "beads", None):
        kw["n_beads"] = args.beads
    if getattr(args, "relax", None) is not None:
        kw["relax_iters"] = args.relax
    if getattr(args, "L", None):
        kw["L"] = args.L
    return MPConfig(**kw)


def _solve_mesh(g, args, center, width):
    """Uniform mesh, or one graded at ``center`` when the expected width is below 20 h."""
    h = args.h
    L = args.L if g.halflines else None
    if center is not None and width < 20 * h:
        return Mesh(g, h, L, [center], h_min=width / 60, grading=0.02)
    return Mesh(g, h, L)


def _seed_center(g, spec, L, width):
    if not spec.startswith("soliton-on-edge:"):
        return None
    k = int(spec.split(":", 1)[1])
    if not 0 <= k < g.n_edges:
        raise InvalidParameter(f"seed edge {k} does not exist")
    if k < len(g.finite_edges):
        return (k, g.finite_edges[k][2] / 2)
    return (k, min(L / 2, 20 * width))


# --- subcommands -------------------------------------------------------------------------

def cmd_graph(args):
    if args.action == "check":
        g = load_graph(args.file)
        rep = classify(g).to_dict()
        rep["min_edge_length"] = min_edge_length(g)
        rep["name"] = g.name
        sys.stdout.write(to_json(rep) + "\n")
        return 0
    try:
        g = build_standard(args.kind, *[float(a) for a in args.args], caps=args.caps)
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"bad arguments for {args.kind}: {args.args}") from exc
    if args.out:
        save_graph(g, args.out)
    else:
        from .metric_graph import graph_to_dict
        sys.stdout.write(to_json(graph_to_dict(g)) + "\n")
    return 0


def cmd_soliton(args):
    p = args.p
    sp = cf.SolitonParams(p, args.mu, args.rho, lam_p6=args.lam or 1.0)
    header = dict(p=p, mu=sp.mu, rho=sp.rho, alpha=sp.alpha, beta=sp.beta, lam=sp.lam,
                  peak=sp.peak)
    if p != 6:
        header["lam_over_lam11"] = sp.lam / cf.lam11(p)
    if p > 6:
        header["theta_p"] = cf.theta_p(p)
        header["energy"] = cf.soliton_energy(p, sp.mu, sp.rho)
    else:
        m, gr, P = cf.soliton_norms(sp)
        header["energy"] = 0.5 * gr - sp.rho / p * P
    xmax = args.xmax or 12.0 / math.sqrt(sp.lam)
    x = np.linspace(-xmax, xmax, args.n)
    lines = ["# " + to_json(header, compact=True),
             "x,value,derivative"]
    v, d = cf.soliton_eval(sp, x), cf.soliton_derivative(sp, x)
    lines += [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(x, v, d)]
    _write(args.out, ".csv" if args.out else "", "\n".join(lines) + "\n")
    return 0


def run_solve(g, args, manifest, mu=None, rho=None):
    p = args.p
    mu = args.mu if mu is None else mu
    rho = args.rho if rho is None else rho
    cfg = _solver_cfg(args)
    method = args.method
    if method in ("nehari", "explicit"):
        if not args.lam:
            raise InvalidParameter(f"--lam is required for method {method}")
        width = 1.0 / math.sqrt(args.lam)
        mesh = _solve_mesh(g, args, None, width)
        if method == "nehari":
            sol = nehari_minimize(mesh, args.lam, p, cfg)
        else:
            sol = explicit_even_halfline_solution(mesh, args.lam, p, cfg)
    else:
        if p == 6:
            raise OutOfRegime("mass-prescribed solves need p != 6")
        width = 1.0 / cf.SolitonParams(p, mu, rho).rate
        center = _seed_center(g, args.seed, args.L, width)
        mesh = _solve_mesh(g, args, center, width)
        if center is not None:
            u0 = soliton_seed(mesh, center[0], center[1], mu, rho, p)
        elif args.seed == "constant":
            u0 = mesh.constant(1.0)
        elif args.seed.startswith("file:"):
            u0, _ = load_csv(args.seed[5:], mesh)
        else:
            raise InvalidParameter(f"unknown seed {args.seed!r}")
        solve = newton_constrained if method == "newton" else gradient_flow_normalized
        sol = solve(mesh, u0, mu, rho, p, cfg)
    manifest.mesh = mesh.params()
    manifest.solver_config = {k: v for k, v in asdict(cfg).items()}
    return sol


def cmd_solve(args):
    g = _graph(args)
    manifest = RunManifest(sys.argv[1:] if args.argv is None else args.argv, _hash(args.graph),
                           rng_seed=args.seed_rng)
    sol = run_solve(g, args, manifest)
    summary = sol.summary()
    summary["mass"] = norms(sol.u, sol.p).l2sq
    summary["manifest"] = asdict(manifest)
    save = args.out or "solution"
    path_csv = f"{save}.csv"
    Path(path_csv).parent.mkdir(parents=True, exist_ok=True)
    save_csv(sol.u, path_csv, {"manifest": asdict(manifest)})
    _write(save, ".json", to_json(summary) + "\n")
    sys.stdout.write(to_json({k: summary[k] for k in ("lam", "energy", "mass", "residual",
                                                       "positive", "iterations")}) + "\n")
    return 0


def build_path(g, args, mu, rho):
    p = args.p
    cfg = _mp_cfg(args, p)
    kind = args.path
    if kind == "auto":
        return auto_path(g, mu, rho, p, cfg), cfg
    if kind.startswith("edge:"):
        return edge_supported_path(g, int(kind[5:]), mu, rho, p, cfg), cfg
    if kind == "pendant":
        return pendant_path(g, mu, rho, p, cfg), cfg
    if kind == "signpost":
        return signpost_path(g, mu, rho, p, cfg), cfg
    if kind == "line":
        return canonical_line_path(mu, rho, p, cfg,
                                   graph=g if not g.finite_edges and g.n_edges <= 2 else None), cfg
    raise InvalidParameter(f"unknown path {kind!r}")


def run_mplevel(g, args, mu=None, rho=None):
    mu = args.mu if mu is None else mu
    rho = args.rho if rho is None else rho
    path, cfg = build_path(g, args, mu, rho)
    lv = path_max_energy(path)
    start_ok, end_ok = check_endpoints(path)
    out = dict(upper_bound=lv.level, upper_bound_valid=lv.valid, argmax_index=lv.argmax,
               endpoint_checks=dict(start_in_A_delta=start_ok, end_in_B=end_ok),
               relaxed_level=None, path=path.kind, eps=path.meta.get("eps"), delta=path.delta)
    if p_gt6 := args.p > 6:
        c_line, c_half = cf.line_and_halfline_levels(args.p, mu, rho)
        out.update(c_line=c_line, c_half=c_half)
    energies = path.energies()
    if cfg.relax_iters > 0:
        rel = minmax_relax(path, cfg)
        out.update(relaxed_level=rel.level, argmax_index=rel.argmax, stalled=rel.stalled)
        energies = rel.path.energies()
    return out, energies, path


def cmd_mplevel(args):
    g = _graph(args)
    out, energies, path = run_mplevel(g, args)
    manifest = RunManifest(sys.argv[1:] if args.argv is None else args.argv, _hash(args.graph),
                           mesh=path.mesh.params(), rng_seed=args.seed_rng)
    out["manifest"] = asdict(manifest)
    if args.out:
        lines = ["# " + to_json({"manifest": asdict(manifest)}, compact=True), "bead,energy"]
        lines += [f"{i},{fmt(e)}" for i, e in enumerate(energies)]
        _write(args.out, "_beads.csv", "\n".join(lines) + "\n")
        _write(args.out, ".json", to_json(out) + "\n")
    sys.stdout.write(to_json({k: out[k] for k in ("upper_bound", "relaxed_level", "argmax_index",
                                                   "endpoint_checks")}) + "\n")
    return 0


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def _sweep_task(payload):
    args, value = payload
    g = load_graph(args.graph)
    key = "mu" if args.over == "mu" else "rho"
    kw = {key: value}
    try:
        if args.what == "solve":
            sol = run_solve(g, args, RunManifest([]), **kw)
            row = dict(sol.summary())
        else:
            out, _, _ = run_mplevel(g, args, **kw)
            row = {k: out[k] for k in ("upper_bound", "relaxed_level", "argmax_index")}
        row["error"] = ""
    except GraphNLSError as exc:
        row = {"error": f"{type(exc).__name__}: {exc}"}
    row[key] = value
    return row


def cmd_sweep(args):
    values = [float(v) for v in args.grid.split(",")]
    tasks = [(args, v) for v in values]
    jobs = max(1, args.jobs)
    if jobs == 1:
        rows = [_sweep_task(t) for t in tasks]
    else:
        with cfut.ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_task, tasks))  # map keeps the input order
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    key = args.over
    cols = [key] + [c for c in cols if c != key]
    manifest = RunManifest(sys.argv[1:] if args.argv is None else args.argv, _hash(args.graph),
                           rng_seed=args.seed_rng)
    lines = ["# " + to_json({"manifest": asdict(manifest)}, compact=True), ",".join(cols)]
    for r in rows:
        lines.append(",".join(_cell(r.get(c)) for c in cols))
    _write(args.out, "" if args.out and args.out.endswith(".csv") else ".csv", "\n".join(lines) + "\n")
    return 1 if any(r.get("error") for r in rows) else 0


SUITES = ("identities", "bounds", "levels", "small-mass", "negative-energy", "periodic")


def run_suite(name, g, args):
    p, mu = args.p, args.mu
    if name == "identities":
        return vf.identity_reports([p] if p > 6 else [])
    if name == "bounds":
        res = vf.mp_pipeline(g, mu, p, _mp_cfg(args, p), _solver_cfg(args), relax_iters=0)
        sol = res.solution
        from .discretization import lambda_bottom
        lam_G = lambda_bottom(res.mesh) if not g.halflines else 0.0
        return [vf.check_linfty_bound(sol, min_edge_length(g)),
                vf.check_multiplier_regime(sol, classify(g), lam_G), vf.check_mass(sol)]
    if name == "levels":
        return vf.check_level_relations(g, p, mu, args.rho, _mp_cfg(args, p))
    if name == "small-mass":
        grid = [float(x) for x in args.mu_grid.split(",")]
        return vf.small_mass_energy_scan(g, p, grid, args.rho, _mp_cfg(args, p), _solver_cfg(args))
    if name == "negative-energy":
        return [vf.negative_energy_witness(g, p)]
    if name == "periodic":
        grid = [int(x) for x in args.cells.split(",")]
        return vf.periodic_existence_probe(grid, p, mu, mp_cfg=_mp_cfg(args, p),
                                           solver_cfg=_solver_cfg(args))
    raise InvalidParameter(f"unknown suite {name!r}")


def cmd_verify(args):
    g = load_graph(args.graph) if args.graph else None
    suites = SUITES if args.suite == "all" else (args.suite,)
    reports = []
    for s in suites:
        if g is None and s not in ("identities", "periodic"):
            raise ConfigurationError(f"suite {s} needs --graph")
        try:
            reports += [(s, r) for r in run_suite(s, g, args)]
        except GraphNLSError as exc:
            if args.suite != "all":
                raise
            reports.append((s, vf.CheckReport(f"{s}_not_applicable", True, math.nan, math.nan, 0.0,
                                              {}, flagged=True, note=str(exc))))
    manifest = RunManifest(sys.argv[1:] if args.argv is None else args.argv, _hash(args.graph),
                           rng_seed=args.seed_rng)
    doc = dict(manifest=asdict(manifest),
               reports=[dict(suite=s, **r.to_dict()) for s, r in reports])
    failed = [r for _, r in reports if not r.passed and not r.flagged]
    doc["all_passed"] = not failed
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(to_json(doc) + "\n")
    for s, r in reports:
        status = "FLAG" if r.flagged else ("PASS" if r.passed else "FAIL")
        sys.stdout.write(f"{status} {s}/{r.name}: measured={fmt(r.measured)} "
                         f"target={fmt(r.bound_or_target)}\n")
    return 3 if failed else 0


# --- parser -------------------------------------------------------------------------

def _load_config(path):
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def build_parser():
    ap = argparse.ArgumentParser(prog="graphnls", description="Normalized NLS solutions on metric graphs")
    ap.add_argument("--config", help="JSON file with default flag values")
    ap.add_argument("--seed-rng", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=int(os.environ.get("GRAPHNLS_JOBS", "1")))
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="build or inspect graph files")
    g.add_argument("action", choices=["check", "build"])
    g.add_argument("--file")
    g.add_argument("--kind", choices=["line", "halfline", "star", "tadpole", "tgraph", "signpost",
                                      "ladder", "interval"])
    g.add_argument("--args", nargs="*", default=[])
    g.add_argument("--caps", choices=["halflines", "dirichlet"], default="halflines")
    g.add_argument("--out")

    s = sub.add_parser("soliton", help="closed-form soliton table")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--lam", type=float, help="frequency on the p = 6 branch")
    s.add_argument("--xmax", type=float)
    s.add_argument("--n", type=int, default=201)
    s.add_argument("--out")

    def common(q, mu=True):
        q.add_argument("--graph", required=True)
        q.add_argument("--p", type=float, required=True)
        if mu:
            q.add_argument("--mu", type=float, default=0.1)
        q.add_argument("--rho", type=float, default=1.0)
        q.add_argument("--h", type=float, default=0.01)
        q.add_argument("--L", type=float, default=30.0)
        q.add_argument("--out")

    so = sub.add_parser("solve", help="solve for one stationary solution")
    common(so)
    so.add_argument("--method", choices=["newton", "flow", "nehari", "explicit"], default="newton")
    so.add_argument("--seed", default="soliton-on-edge:0")
    so.add_argument("--lam", type=float)
    so.add_argument("--tol", type=float)

    mp = sub.add_parser("mplevel", help="mountain-pass level bounds")
    common(mp)
    mp.add_argument("--path", default="auto")
    mp.add_argument("--beads", type=int, default=64)
    mp.add_argument("--relax", type=int, default=0)

    sw = sub.add_parser("sweep", help="iterate solve/mplevel over a mu or rho grid")
    common(sw)
    sw.add_argument("--what", choices=["solve", "mplevel"], default="solve")
    sw.add_argument("--over", choices=["mu", "rho"], default="mu")
    sw.add_argument("--grid", required=True, help="comma separated values")
    sw.add_argument("--method", choices=["newton", "flow", "nehari", "explicit"], default="newton")
    sw.add_argument("--seed", default="soliton-on-edge:0")
    sw.add_argument("--lam", type=float)
    sw.add_argument("--tol", type=float)
    sw.add_argument("--path", default="auto")
    sw.add_argument("--beads", type=int, default=64)
    sw.add_argument("--relax", type=int, default=0)

    v = sub.add_parser("verify", help="run check suites")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--graph")
    v.add_argument("--p", type=float, required=True)
    v.add_argument("--mu", type=float, default=0.1)
    v.add_argument("--rho", type=float, default=1.0)
    v.add_argument("--mu-grid", default="0.4,0.2,0.1,0.05")
    v.add_argument("--cells", default="6,10,14")
    v.add_argument("--beads", type=int, default=64)
    v.add_argument("--relax", type=int)
    v.add_argument("--L", type=float, default=30.0)
    v.add_argument("--out")
    return ap


COMMANDS = dict(graph=cmd_graph, soliton=cmd_soliton, solve=cmd_solve, mplevel=cmd_mplevel,
                sweep=cmd_sweep, verify=cmd_verify)


def dispatch(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return int(exc.code or 0)
    try:
        # precedence: flags > config file > defaults
        conf = _load_config(args.config)
        if conf:
            defaults = build_parser().parse_args(argv[: argv.index(args.command) + 1]
                                                 + _required_stub(args))
            for k, val in conf.items():
                k = k.replace("-", "_")
                if hasattr(args, k) and getattr(args, k) == getattr(defaults, k, None):
                    setattr(args, k, val)
        args.argv = argv
        return COMMANDS[args.command](args)
    except GraphNLSError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


def _required_stub(args):
    """Re-supply required flags so that defaults can be recovered for config merging."""
    stub = []
    for flag in ("graph", "p", "grid"):
        if getattr(args, flag, None) is not None and args.command != "graph":
            stub += [f"--{flag}", str(getattr(args, flag))]
    return stub


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
