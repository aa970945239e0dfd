"""Command-line front end: ``cq verify | solve | sweep | surface``.

Exit codes: 0 success, 1 violation or non-convergence, 2 usage, config or
I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys

import numpy as np

from curvquot.config import ConfigError, load_config
from curvquot.geometry import (
    SURFACE_KINDS,
    GraphPatch,
    analytic_surface,
    codazzi_residual,
    curvature_error,
    derive_fields,
    gauss_residual,
    write_patch,
)
from curvquot.harness import curvature_report, run_sweep, solve_problem
from curvquot.ineq_lab import DISTRIBUTIONS, CampaignConfig, run_campaign
from curvquot.quotient import QuotientOperator, f_value_batch
from curvquot.solver import write_trace

log = logging.getLogger("curvquot")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_n_values(text: str) -> tuple:
    """``"5"``, ``"3..6"`` or ``"3-6"`` -> tuple of dimensions."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:(?:\.\.|-)\s*(\d+)\s*)?", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected an integer or a range a..b, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) else lo
    if lo < 2 or hi < lo:
        raise argparse.ArgumentTypeError(f"dimension range must satisfy 2 <= a <= b, got {text!r}")
    return tuple(range(lo, hi + 1))


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cq", description="Curvature quotient toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="sample spectra and check every identity and inequality")
    v.add_argument("--n", type=parse_n_values, default=(3, 4, 5, 6))
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=_seed, default=42)
    v.add_argument("--dist", choices=DISTRIBUTIONS, default="loguniform")
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--out", default=None, help="CSV path (stdout when omitted)")

    s = sub.add_parser("solve", help="solve the first problem of a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-prefix", required=True)

    w = sub.add_parser("sweep", help="solve and diagnose every problem of a config file")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)

    f = sub.add_parser("surface", help="sample an analytic surface")
    f.add_argument("--kind", choices=SURFACE_KINDS, required=True)
    f.add_argument("--params", type=parse_floats, required=True)
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--r", type=float, required=True)
    f.add_argument("--m", type=int, required=True)
    f.add_argument("--report", action="store_true",
                   help="print a JSON diagnostic report instead of the patch CSV")
    return p


def cmd_verify(args) -> int:
    if args.samples < 0:
        raise UsageError("--samples must be nonnegative")
    cfg = CampaignConfig(n_values=args.n, samples=args.samples, distribution=args.dist,
                         seed=args.seed, tol=args.tol)
    report = run_campaign(cfg)
    if args.out:
        report.write_csv(args.out)
    else:
        sys.stdout.write(report.to_csv())
    excess = report.constant_excess()
    for lemma_id, n, found, bound in excess:
        print(f"constant above candidate: {lemma_id} n={n}: {found!r} > {bound!r}", file=sys.stderr)
    print(f"violations: {report.total_violations}", file=sys.stderr)
    return EXIT_OK if report.ok and not excess else EXIT_FAIL


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if not cfg.problems:
        raise UsageError(f"{args.config}: no problem section")
    if len(cfg.problems) > 1:
        log.info("solving the first of %d problem entries", len(cfg.problems))
    problem = cfg.problems[0]
    spec = problem.build()
    outcome = solve_problem(spec, cfg.solver)
    prefix = args.out_prefix
    if outcome.trace:
        write_trace(outcome.trace, f"{prefix}_trace.csv")
    if outcome.status != "ok":
        print(f"{problem.name}: {outcome.status}: {outcome.error}", file=sys.stderr)
        return EXIT_FAIL
    u = outcome.state.u
    patch = GraphPatch(spec.n, spec.r, spec.m, u, problem.boundary, problem.boundary_params)
    fields = derive_fields(patch)
    rep = curvature_report(u, spec, fields)
    extra = {"problem": problem.name, "k": spec.k, "iterations": outcome.state.step,
             "residual_max": outcome.state.residual_norm, "diagnostics": rep.as_dict()}
    if spec.exact is not None:
        extra["solution_error"] = float(np.max(np.abs(u - spec.exact(spec.coords()))))
    write_patch(patch, f"{prefix}.csv", extra=extra)
    print(f"{problem.name}: converged in {outcome.state.step} iterations, "
          f"residual {outcome.state.residual_norm:.3e}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    report = run_sweep(cfg)
    report.write_csv(args.out)
    bad = [r for r in report.rows if not r["status"].startswith("ok")]
    print(f"{len(report.rows)} rows, {len(bad)} failed", file=sys.stderr)
    return EXIT_OK if not bad else EXIT_FAIL


def surface_report(kind, params, n, r, m) -> dict:
    patch, exact = analytic_surface(kind, params, n, r, m)
    fields = derive_fields(patch)
    interior = fields.curvatures[(slice(1, -1),) * n]
    out = {"kind": kind, "params": list(patch.params), "n": n, "r": r, "m": m, "h": patch.h,
           "curvature_error": curvature_error(patch, exact, fields),
           "curvature_error_inner": curvature_error(patch, exact, fields, inner=0.5),
           "codazzi_residual": codazzi_residual(patch, fields),
           "codazzi_residual_inner": codazzi_residual(patch, fields, inner=0.5),
           "min_interior_curvature": float(interior[..., -1].min()),
           "max_interior_curvature": float(interior[..., 0].max())}
    if n >= 2:
        out["gauss_residual"] = gauss_residual(patch, fields)
        out["gauss_residual_inner"] = gauss_residual(patch, fields, inner=0.5)
    if n >= 3:
        op = QuotientOperator(n)
        c = (m // 2,) * n
        out["F_center"] = float(f_value_batch(op, fields.curvatures[c][None])[0])
    # residuals over a region the grid is too coarse to contain come back NaN
    return {k: (None if isinstance(v, float) and v != v else v) for k, v in out.items()}


def cmd_surface(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.report:
        rep = surface_report(args.kind, args.params, args.n, args.r, args.m)
        json.dump(rep, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK
    patch, _ = analytic_surface(args.kind, args.params, args.n, args.r, args.m)
    x = patch.coords().reshape(-1, args.n)
    sys.stdout.write(",".join([f"x{i + 1}" for i in range(args.n)] + ["u"]) + "\n")
    for row, val in zip(x, patch.u.reshape(-1)):
        sys.stdout.write(",".join(repr(float(v)) for v in (*row, val)) + "\n")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "sweep": cmd_sweep, "surface": cmd_surface}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"cq {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cq {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"cq {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
