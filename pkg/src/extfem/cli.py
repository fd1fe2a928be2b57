"""Command line front end.

Subcommands: ``run`` (convergence study, CSV output), ``verify-quadrature``
(measure-convergence tables), ``cond`` (condition number vs mesh size) and
``table`` (render a results CSV as aligned text).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import study as _study
from .linalg import estimate_cond
from .study import (
    ExperimentConfig,
    builtin_problem,
    fitted_order,
    read_csv,
    render_table,
    run_convergence,
    solve_problem,
    verify_quadrature,
)

EXTENDED_3D_GRIDS = (32, 64)


def _parse_ints(text):
    return tuple(int(t) for t in str(text).split(","))


def _parse_depths(text):
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return _parse_ints(text)


def _add_run(sub):
    p = sub.add_parser("run", help="run a convergence study")
    p.add_argument("--example", type=int, default=1, choices=range(1, 7))
    p.add_argument("--degrees", type=_parse_ints, default=(1,))
    p.add_argument("--grids", type=_parse_ints, default=None)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--nonsym", action="store_true")
    p.add_argument("--cond", action="store_true", help="report condition numbers")
    p.add_argument("--quad-depth", type=int, default=None)
    p.add_argument("--quad-degree", type=int, default=None)
    p.add_argument("--solver", choices=("direct", "cg"), default="direct")
    p.add_argument("--contrast", type=float, default=None, help="example 4 only")
    p.add_argument("--extended", action="store_true",
                   help="also run n=32,64 for the 3D examples")
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--out", default=None, help="write results CSV here")
    return p


def _cmd_run(args):
    cfg_kwargs = {}
    if args.config:
        with open(args.config) as fh:
            cfg_kwargs = json.load(fh)
    problem = builtin_problem(
        cfg_kwargs.get("example", args.example),
        contrast=cfg_kwargs.get("contrast", args.contrast),
    )
    grids = args.grids or cfg_kwargs.get("grid_sizes") or problem.default_grids
    if args.extended and problem.dim == 3:
        grids = tuple(grids) + tuple(g for g in EXTENDED_3D_GRIDS if g > max(grids))
    overrides = dict(
        example=cfg_kwargs.get("example", args.example),
        degrees=cfg_kwargs.get("degrees", args.degrees),
        grid_sizes=grids,
        penalty=cfg_kwargs.get("penalty", args.penalty),
        symmetry=cfg_kwargs.get("symmetry", "nonsym" if args.nonsym else "sym"),
        quad_degree=cfg_kwargs.get("quad_degree", args.quad_degree),
        quad_depth=cfg_kwargs.get("quad_depth", args.quad_depth),
        solver=cfg_kwargs.get("solver", args.solver),
        report_condition=cfg_kwargs.get("report_condition", args.cond),
        contrast=cfg_kwargs.get("contrast", args.contrast),
        out_csv=cfg_kwargs.get("out_csv", args.out),
    )
    for key in ("solver_tol", "solver_maxit", "verify_depth"):
        if key in cfg_kwargs:
            overrides[key] = cfg_kwargs[key]
    config = ExperimentConfig(**overrides)
    result = run_convergence(config)

    header = _study.CSV_COLUMNS
    rows = []
    for r in result.rows:
        rows.append(
            [
                r.m, r.n, f"{r.h:.5g}", r.dofs, f"{r.e_l2:.4e}", f"{r.e_energy:.4e}",
                "" if r.rate_l2 is None else f"{r.rate_l2:.2f}",
                "" if r.rate_energy is None else f"{r.rate_energy:.2f}",
                "" if r.kappa is None else f"{r.kappa:.3e}",
                "" if r.cg_iters is None else r.cg_iters,
                "" if r.wall_ms is None else f"{r.wall_ms:.0f}",
            ]
        )
    print(render_table(header, rows))
    for m in config.degrees:
        fl = result.fitted.get((m, "l2"))
        fe = result.fitted.get((m, "energy"))
        if fl is not None:
            print(f"m={m}: fitted order  L2 {fl:.2f}   energy {fe:.2f}")
    for m, n, why in result.failures:
        print(f"FAILED m={m} n={n}: {why}", file=sys.stderr)
    if config.out_csv:
        print(f"wrote {config.out_csv}")
    return 0 if not result.failures else 1


def _cmd_verify_quadrature(args):
    rows = verify_quadrature(args.example, args.depths, n=args.n, degree=args.degree)
    keys = list(rows[0].keys())
    table = [[("%d" % r[k]) if k == "depth" else f"{r[k]:.9e}" for k in keys] for r in rows]
    print(render_table(keys, table))
    return 0


def _cmd_cond(args):
    problem = builtin_problem(args.example)
    hs, ks = [], []
    for n in args.grids:
        space, ls, coeffs, info = solve_problem(problem, n, args.degree)
        kappa = estimate_cond(info["system"].A)
        hs.append(space.mesh.cell_width)
        ks.append(kappa)
        print(f"n={n:4d}  h={hs[-1]:.5g}  dofs={info['dofs']:6d}  kappa={kappa:.4e}")
    if len(hs) >= 2:
        slope = fitted_order(hs, ks)
        print(f"log-log slope of kappa vs h: {slope:.2f}  (h^-2 scaling = -2)")
    return 0


def _cmd_table(args):
    header, rows = read_csv(args.csv)
    print(render_table(header, rows))
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="extfem", description="Unfitted FEM by direct extension"
    )
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run(sub)

    p = sub.add_parser("verify-quadrature", help="measure-convergence tables")
    p.add_argument("--example", type=int, default=1, choices=range(1, 7))
    p.add_argument("--depths", type=_parse_depths, default=tuple(range(2, 8)))
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--degree", type=int, default=2)

    p = sub.add_parser("cond", help="condition number vs mesh size")
    p.add_argument("--example", type=int, default=1, choices=range(1, 7))
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--grids", type=_parse_ints, default=(10, 20, 40))

    p = sub.add_parser("table", help="render a results CSV")
    p.add_argument("csv")

    args = ap.parse_args(argv)
    np.set_printoptions(precision=6)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "verify-quadrature":
        return _cmd_verify_quadrature(args)
    if args.command == "cond":
        return _cmd_cond(args)
    if args.command == "table":
        return _cmd_table(args)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
