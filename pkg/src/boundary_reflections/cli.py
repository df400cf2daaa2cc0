"""Method-of-reflections experiments for 2D Laplace problems with several objects.

Exit status: 0 when a run converged or a study completed, 2 when a
convergence-checked run did not converge, 1 on errors (and when
``--expect-divergence`` is given but every run converged).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bvp import Discretization, ProblemError, solve_direct
from .config import ConfigError, default_config, load_config, node_summary, build_problem
from .experiments import (
    distance_sweep,
    divergence_case,
    padded,
    projection_demo,
    triangle_convergence,
)
from .geometry import GeometryError
from .output import (
    ERROR_COLUMNS,
    PROJECTION_COLUMNS,
    SWEEP_COLUMNS,
    OutputError,
    emit_plotdata,
    fmt,
    write_csv,
)
from .projection_lab import line
from .reflections import ReflectionError, ReflectionForm, probe_points, run_reflections

log = logging.getLogger("boundary_reflections")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _config(args, kind):
    cfg = load_config(args.config, kind) if args.config else default_config(kind)
    p = cfg.params
    for name in ("cycles", "tol", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            p[name] = val
    if getattr(args, "form", None):
        p["form"] = args.form
    return cfg


def _meta(cfg, command, **extra):
    meta = {"command": command, "config_sha256": cfg.digest(), "seed": cfg.params.get("seed", 0)}
    meta.update(extra)
    return meta


def _convergence_exit(statuses, expect_divergence):
    if all(s == "converged" for s in statuses):
        return EXIT_ERROR if expect_divergence else EXIT_OK
    return EXIT_NOT_CONVERGED


def cmd_solve(args) -> int:
    cfg = _config(args, "solve")
    problem = build_problem(cfg)
    disc = Discretization(problem)
    sol = solve_direct(problem, disc)
    pts = probe_points(problem.layout, cfg.params["probes"], cfg.params["seed"])
    vals = sol.field(pts)
    out = Path(args.out) / "solution.csv"
    write_csv(out, ("x", "y", "u"), np.column_stack([pts, vals]),
              _meta(cfg, "solve", nodes=node_summary(problem)))
    print(f"condition estimate {sol.condition:.3e}")
    for j, c in sorted(sol.constants.items()):
        print(f"object {j} boundary constant {fmt(c)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_reflect(args) -> int:
    cfg = _config(args, "reflect")
    p = cfg.params
    problem = build_problem(cfg)
    form = ReflectionForm.parse(p["form"], problem.n_objects)
    _, rep = run_reflections(problem, form, p["cycles"], p["tol"], metric=p["metric"],
                             seed=p["seed"], workers=args.workers)
    key = {"sequential": "seq", "parallel": "par"}.get(form.kind, "avgpar")
    rows = [(k, e) for k, e in enumerate(rep.errors)]
    out = Path(args.out) / f"reflect_{key}.csv"
    write_csv(out, ("iter", f"error_{key}"), rows,
              _meta(cfg, "reflect", nodes=node_summary(problem), tol=fmt(p["tol"]),
                    max_cycles=p["cycles"], form=form.label))
    print(f"{form.label}: {rep.status} after {rep.cycles} cycles, error {rep.final_error:.3e}")
    if rep.contraction is not None:
        print(f"contraction factor {rep.contraction:.6g}")
    return _convergence_exit([rep.status], args.expect_divergence)


def cmd_triangle(args) -> int:
    cfg = _config(args, "triangle_convergence")
    p = cfg.params
    results = triangle_convergence(
        p["sides"], p["radius"], p["nodes"], p["container_radius"], p["container_nodes"],
        p["datum"], p["cycles"], p["tol"], p["seed"], args.workers,
    )
    nodes = f"object:{p['nodes']},container:{p['container_nodes']}"
    for res in results:
        cols = [padded(res.runs[k].errors, p["cycles"] + 1) for k in ("seq", "par", "avg")]
        rows = [(k, *vals) for k, vals in enumerate(zip(*cols))]
        name = f"triangle_l{res.side!r}.csv"
        write_csv(Path(args.out) / name, ERROR_COLUMNS, rows,
                  _meta(cfg, "triangle-convergence", side=repr(res.side), radius=repr(p["radius"]),
                        nodes=nodes, tol=fmt(p["tol"]), max_cycles=p["cycles"]))
        for k, run in res.runs.items():
            K = "n/a" if run.contraction is None else f"{run.contraction:.4g}"
            print(f"l={res.side!r} {k}: {run.status}, final error {run.final_error:.3e}, K={K}")
    return EXIT_OK


def cmd_divergence(args) -> int:
    cfg = _config(args, "divergence_case")
    p = dict(cfg.params)
    cycles, tol, seed = p.pop("cycles"), p.pop("tol"), p.pop("seed")
    runs = divergence_case(cycles, tol, seed, args.workers, **p)
    cols = [padded(runs[k].errors, cycles + 1) for k in ("seq", "par", "avg")]
    rows = [(k, *vals) for k, vals in enumerate(zip(*cols))]
    nodes = f"disk:{p['disk_nodes']},cshape:{p['cshape_nodes']},container:{p['container_nodes']}"
    write_csv(Path(args.out) / "divergence_case.csv", ERROR_COLUMNS, rows,
              _meta(cfg, "divergence-case", nodes=nodes, tol=fmt(tol), max_cycles=cycles))
    for k, run in runs.items():
        status = run.status
        if status == "max_cycles":
            status = "max_cycles without convergence"
        print(f"{k}: {status}, final error {run.final_error:.3e}")
    return _convergence_exit([r.status for r in runs.values()], args.expect_divergence)


def cmd_sweep(args) -> int:
    cfg = _config(args, "distance_sweep")
    p = cfg.params
    res = distance_sweep(p["distances"], p["radius"], p["nodes"], p["cycles"], p["discard"],
                         p["fit_count"], p["seed"], args.workers)
    rows = [(res.distances[i], *(res.coefficients[k][i] for k in ("seq", "par", "avg")))
            for i in range(len(res.distances))]
    write_csv(Path(args.out) / "distance_sweep.csv", SWEEP_COLUMNS, rows,
              _meta(cfg, "distance-sweep", nodes=f"object:{p['nodes']}", radius=fmt(p["radius"]),
                    cycles=p["cycles"], discard=p["discard"], fit_count=p["fit_count"]))
    for k in ("seq", "par", "avg"):
        print(f"{k}: slope {res.slopes[k]:.4f}, intercept {res.intercepts[k]:.4f}")
    return EXIT_OK


def cmd_projection(args) -> int:
    cfg = _config(args, "projection_demo")
    p = cfg.params
    bases = None
    if p["preset"] == "lines":
        bases = [line(0.0), line(math.radians(p["angle_deg"]))]
    elif p["preset"] != "random":
        raise ConfigError(f"unknown projection preset {p['preset']!r}")
    demo = projection_demo(p["seed"], p["dim"], [int(d) for d in p["dims"]], p["shared"], p["steps"], bases)
    rows = [(k, a, b) for k, (a, b) in enumerate(zip(demo.errors_alternating, demo.errors_averaged))]
    write_csv(Path(args.out) / "projection_demo.csv", PROJECTION_COLUMNS, rows,
              _meta(cfg, "projection-demo", dim=p["dim"], steps=p["steps"]))
    print(f"intersection dimension {demo.intersection_dim}; final errors "
          f"{demo.errors_alternating[-1]:.3e} (alternating), {demo.errors_averaged[-1]:.3e} (averaged)")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    dat, gp, slopes = emit_plotdata(args.csv, args.out)
    for k, s in slopes.items():
        print(f"{k} slope {s:.6f}")
    print(f"wrote {dat} and {gp}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflections", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, convergence=True):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="probe cloud / random seed")
        if convergence:
            sp.add_argument("--cycles", type=int, help="maximum number of cycles")
            sp.add_argument("--tol", type=float, help="error tolerance")
            sp.add_argument("--workers", type=int, default=1, help="threads for parallel cycles")

    sp = sub.add_parser("solve", help="direct solve of a configured problem")
    common(sp, convergence=False)
    sp.set_defaults(func=cmd_solve)

    for name, func, helptext in (
        ("reflect", cmd_reflect, "method of reflections on a configured problem"),
        ("triangle-convergence", cmd_triangle, "three discs in a disc, error histories"),
        ("divergence-case", cmd_divergence, "disc and C-shape with mixed conditions"),
        ("distance-sweep", cmd_sweep, "contraction factor against distance"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        if name == "reflect":
            sp.add_argument("--form", choices=["seq", "par", "avg"], help="reflection form")
        if name in ("reflect", "divergence-case"):
            sp.add_argument("--expect-divergence", action="store_true",
                            help="treat non-convergence as the expected outcome")
        sp.set_defaults(func=func)

    sp = sub.add_parser("projection-demo", help="alternating vs averaged projections")
    common(sp, convergence=False)
    sp.set_defaults(func=cmd_projection)

    sp = sub.add_parser("plotdata", help="gnuplot data and script from an output CSV")
    sp.add_argument("csv")
    sp.add_argument("--out", help="output directory (default: next to the CSV)")
    sp.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        parser.error("--workers must be positive")
    try:
        return args.func(args)
    except (ConfigError, GeometryError, ProblemError, ReflectionError, OutputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
