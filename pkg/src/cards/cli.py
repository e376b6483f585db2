"""Command line interface: ``cards fit | simulate | diagnose``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import report as rpt
from .api import fit as api_fit
from .api import preprocess
from .core import GroupedCoefficients, validate_partition
from .errors import (
    AllZeroError,
    CardsError,
    DataError,
    DfTooLargeError,
    InconsistentOrderError,
    InvalidSpecError,
    LambdaZeroError,
    MismatchedUniverseError,
    NoConvergenceError,
    NotApplicableError,
    PartitionError,
    SingularGramError,
    ZeroColumnError,
)
from .penalty import PenaltySpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHOD_ALIASES = {"fused": "fused_ordered"}

_USAGE_ERRORS = (InvalidSpecError, LambdaZeroError)
_DATA_ERRORS = (DataError, PartitionError, ZeroColumnError, InconsistentOrderError, NotApplicableError,
                MismatchedUniverseError)
_NUMERIC_ERRORS = (NoConvergenceError, SingularGramError, AllZeroError, DfTooLargeError)


class UsageError(Exception):
    pass


def _exit_code(exc) -> int:
    if isinstance(exc, (UsageError,) + _USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, _NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_DATA
    return EXIT_NUMERIC


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        rpt.write_atomic(path, text)


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {s!r}") from None


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------

def cmd_fit(args) -> int:
    X, y, names = rpt.parse_dataset_csv(args.data, args.response)
    method = METHOD_ALIASES.get(args.method, args.method)
    if args.tune is None and args.lam is None:
        raise UsageError("give --lambda (and --lambda2/--delta where needed) or --tune")
    if args.tune is None and method in ("acards", "scards") and (args.delta is None or args.lam2 is None):
        raise UsageError(f"{method} needs --delta and --lambda2 (or --tune)")
    grids = {}
    if args.lambda_grid:
        grids["lambda"] = args.lambda_grid
    if args.delta_grid:
        grids["delta"] = args.delta_grid
    res = api_fit(
        X, y, method=method, penalty=args.penalty, a=args.a, lam=args.lam, lam2=args.lam2,
        delta=args.delta, lam_sparse=args.lam_sparse, tune=args.tune, grids=grids or None,
        preliminary=args.preliminary, standardize_columns=not args.no_standardize,
        center=not args.no_center, workers=args.threads,
    )
    text = rpt.dumps(rpt.fit_report(res, names))
    _emit(text, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulation import SimConfig, run_replications

    exp = f"exp{args.experiment}"
    methods = tuple(METHOD_ALIASES.get(m, m) for m in args.methods.split(",")) if args.methods else None
    try:
        cfg = SimConfig(exp, r=args.r, T=args.T, reps=args.reps, master_seed=args.seed,
                        test_size=args.test_size, methods=methods, workers=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = run_replications(cfg)
    if args.csv:
        rpt.write_atomic(args.csv, rpt.sim_csv(rep))
    if args.svg:
        rpt.write_atomic(args.svg, rpt.sim_svg(rep, args.svg_metric))
    _emit(rpt.dumps(rpt.sim_summary(rep, args.timing)), args.out)
    return EXIT_OK if not rep.failures else EXIT_NUMERIC


# --------------------------------------------------------------------------
# diagnose
# --------------------------------------------------------------------------

def _true_values(args, P, X, y):
    if args.values:
        vals = np.array(args.values, dtype=float)
        if vals.size != P.K:
            raise UsageError(f"--values needs {P.K} numbers, got {vals.size}")
        return GroupedCoefficients(vals, P.sizes)
    return None


def _order(args, X, y):
    if args.order == "identity":
        return np.arange(X.shape[1])
    from .preliminary import fit_ols
    from .segmentation import rank_map

    return rank_map(fit_ols(X, y))


def cmd_diagnose(args) -> int:
    from . import oracle

    Xraw, y, names = rpt.parse_dataset_csv(args.data, args.response)
    D, yc, _ = preprocess(Xraw, y, not args.no_standardize, not args.no_center)
    X = D.values
    p = X.shape[1]
    if args.partition is None:
        raise UsageError("--partition FILE is required")
    P = rpt.read_partition(args.partition)
    validate_partition(P, p, complete=True)
    out = {"schema": rpt.SCHEMA, "check": args.check, "p": p, "n": X.shape[0]}
    if args.check == "kkt":
        if args.lam is None:
            raise UsageError("--check kkt needs --lambda")
        spec = PenaltySpec(args.penalty, args.lam, args.a)
        r = oracle.kkt_oracle_check(X, yc, P, _order(args, X, yc), spec)
        out.update(passed=r.passed, flat_tail_ok=r.flat_tail_ok, partial_sums_ok=r.partial_sums_ok,
                   min_boundary_gap=r.min_boundary_gap, max_boundary_derivative=r.max_boundary_derivative,
                   max_partial_sum=r.max_partial_sum, bound=r.bound, oracle=r.oracle)
    elif args.check == "irrep":
        vals = _true_values(args, P, X, yc)
        if vals is None:
            raise UsageError("--check irrep needs --values")
        r = oracle.irrepresentability_check(X, P, _order(args, X, yc), vals)
        out.update(d0=r.d0, b0=r.b0, margin=r.margin, satisfied=r.satisfied, jump_signs_ok=r.jump_signs_ok,
                   group_order=[k + 1 for k in r.order])
    elif args.check in ("regularity", "lambda-bounds"):
        vals = _true_values(args, P, X, yc)
        r = oracle.regularity_constants(X, P, vals)
        out.update(sigma=r.sigma, nu=r.nu, c1=r.c1, c2=r.c2, b_n=r.b_n, c4=r.c4)
        if args.check == "lambda-bounds":
            n = X.shape[0]
            out["lambda_bounds"] = {
                v: oracle.lambda_bounds(r, n, p, P.K, P.sizes, v)
                for v in (oracle.BCARDS, oracle.ACARDS_BETWEEN, oracle.ACARDS_WITHIN)
            }
    elif args.check == "variance":
        if not args.direction:
            raise UsageError("--check variance needs --direction")
        a = np.array(args.direction, dtype=float)
        if a.size != p:
            raise UsageError(f"--direction needs {p} numbers, got {a.size}")
        v1, v2 = oracle.variance_pair(X, P, a)
        out.update(v1=v1, v2=v2)
    else:
        oracle.oracle_fit(X, yc, P)
    if args.check == "oracle":
        f = oracle.oracle_fit(X, yc, P)
        out.update(coefficients=f.coefficients, group_se=f.group_se)
    _emit(rpt.dumps(out), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cards", description="Coefficient clustering in linear regression.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="CSV file with a header row")
        sp.add_argument("--response", help="response column name (default: first column)")
        sp.add_argument("--no-standardize", action="store_true", help="do not rescale columns to norm sqrt(n)")
        sp.add_argument("--no-center", action="store_true", help="do not centre y and X (no intercept)")
        sp.add_argument("--out", help="output file (default: stdout)")

    def penalty_args(sp):
        sp.add_argument("--penalty", choices=("scad", "mcp", "l1"), default="scad")
        sp.add_argument("--a", type=float, help="concavity parameter (default 3.7 SCAD, 3 MCP)")
        sp.add_argument("--lambda", "--lambda1", dest="lam", type=float)

    f = sub.add_parser("fit", help="fit CARDS or a baseline to a CSV data set")
    data_args(f)
    penalty_args(f)
    f.add_argument("--method", choices=("bcards", "acards", "scards", "tv", "fused"), default="acards")
    f.add_argument("--lambda2", dest="lam2", type=float)
    f.add_argument("--delta", type=float)
    f.add_argument("--lambda-sparse", dest="lam_sparse", type=float)
    f.add_argument("--tune", choices=("bic", "gcv"))
    f.add_argument("--lambda-grid", type=_floats, help="comma separated lambda values")
    f.add_argument("--delta-grid", type=_floats, help="comma separated delta values")
    f.add_argument("--preliminary", choices=("ols", "scad"))
    f.add_argument("--threads", type=int, help="worker processes (default: CARDS_THREADS or 1)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a simulation experiment")
    s.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--r", type=float, default=1.0)
    s.add_argument("--T", type=int, default=80)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-size", type=int, default=10_000)
    s.add_argument("--methods", help="comma separated subset of the experiment's methods")
    s.add_argument("--csv", help="per-replication CSV (rep,method,pe,nmi,fp)")
    s.add_argument("--svg", help="SVG boxplot of one metric")
    s.add_argument("--svg-metric", choices=("pe", "nmi", "fp"), default="pe")
    s.add_argument("--timing", action="store_true", help="include run times in the JSON summary")
    s.add_argument("--out", help="JSON summary file (default: stdout)")
    s.add_argument("--threads", type=int, help="worker processes (default: CARDS_THREADS or 1)")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("diagnose", help="oracle and theory diagnostics for a known partition")
    data_args(d)
    penalty_args(d)
    d.add_argument("--check", required=True,
                   choices=("kkt", "irrep", "regularity", "lambda-bounds", "variance", "oracle"))
    d.add_argument("--partition", help="JSON array of 1-based index arrays")
    d.add_argument("--values", type=_floats, help="true group values, comma separated")
    d.add_argument("--direction", type=_floats, help="linear functional a, comma separated")
    d.add_argument("--order", choices=("ols", "identity"), default="ols",
                   help="ranking used by kkt/irrep (default: from OLS)")
    d.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"cards: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CardsError, OSError, ValueError) as exc:
        print(f"cards: error: {exc}", file=sys.stderr)
        code = _exit_code(exc)
        if code == EXIT_NUMERIC and not isinstance(exc, _NUMERIC_ERRORS) and isinstance(exc, ValueError):
            code = EXIT_DATA
        return code


if __name__ == "__main__":
    sys.exit(main())
