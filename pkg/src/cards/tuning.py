"""BIC / GCV model selection over penalty grids."""
from __future__ import annotations

import itertools
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .core import FitResult, Partition, as_coefficients, as_matrix, as_response
from .errors import CardsError, DfTooLargeError
from .penalty import PenaltySpec
from .preliminary import ScadConfig, fit_scad_sparse
from .segmentation import default_delta, sorted_gaps
from .solver import (
    QuadraticLoss,
    SolverConfig,
    fit_acards,
    fit_bcards,
    fit_fused_ordered,
    fit_scards,
    fit_tv,
)

log = logging.getLogger(__name__)

METHODS = ("bcards", "acards", "scards", "tv", "fused_ordered")
N_LAMBDA = 30
LAMBDA_RATIO = 0.01
DELTA_FACTORS = (0.0, 0.25, 0.5, 1.0, 2.0)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("CARDS_THREADS", "1")))
    except ValueError:
        return 1


def _rss(X, y, fit: FitResult) -> float:
    r = y - X @ fit.coefficients - fit.intercept
    return float(r @ r)


def bic_score(X, y, fit: FitResult) -> float:
    """n log(RSS/n) + log(n) df, df = number of nonzero fitted groups."""
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    n = X.shape[0]
    rss = _rss(X, y, fit)
    if rss <= 0:
        warnings.warn("zero residual sum of squares: BIC is -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return n * math.log(rss / n) + math.log(n) * fit.df


def gcv_score(X, y, fit: FitResult) -> float:
    """(RSS/n) / (1 - df/n)^2."""
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    n = X.shape[0]
    df = fit.df
    if df >= n:
        raise DfTooLargeError(f"df={df} >= n={n}")
    return (_rss(X, y, fit) / n) / (1 - df / n) ** 2


CRITERIA = {"bic": bic_score, "gcv": gcv_score}


def lambda_max(X, y) -> float:
    """Spread of the marginal correlations z = X'y/n (largest pairwise gap)."""
    X = as_matrix(X)
    z = X.T @ as_response(y, X.shape[0]) / X.shape[0]
    spread = float(z.max() - z.min())
    if spread <= 0:
        spread = float(np.max(np.abs(z)))
    return spread if spread > 0 else 1.0


def default_lambda_grid(X, y, n_points: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    top = lambda_max(X, y)
    return np.geomspace(ratio * top, top, n_points)


def default_delta_grid(beta_tilde) -> np.ndarray:
    bt = as_coefficients(beta_tilde)
    nz = bt[bt != 0]
    q = default_delta(nz if nz.size > 1 else bt)
    return np.unique(np.array(DELTA_FACTORS) * q)


def _mean_segment_size(beta_tilde, delta: float, sparse: bool) -> float:
    bt = as_coefficients(beta_tilde)
    if sparse:
        bt = bt[bt != 0]
    if bt.size == 0:
        return 1.0
    n_seg = 1 + int(np.sum(sorted_gaps(bt) > delta))
    return bt.size / n_seg


def expand_grid(method: str, grids: dict, X, y, beta_tilde) -> list[dict]:
    """Cartesian product of the grids relevant to ``method`` (defaults filled in).

    For acards/scards the within-segment level is lambda2 = scale * lambda /
    (mean segment size), with ``lambda2_scale`` gridded (default 1).  For
    scards ``lambda_sparse`` defaults to tracking lambda.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    grids = dict(grids or {})
    lam = np.asarray(grids.get("lambda", default_lambda_grid(X, y)), dtype=float)
    if lam.size == 0:
        raise ValueError("empty lambda grid")
    if method in ("bcards", "tv", "fused_ordered"):
        return [{"lambda": float(v)} for v in lam]
    if beta_tilde is None:
        raise ValueError(f"{method} needs a preliminary estimate")
    delta = np.asarray(grids.get("delta", default_delta_grid(beta_tilde)), dtype=float)
    scale = np.asarray(grids.get("lambda2_scale", (1.0,)), dtype=float)
    if delta.size == 0 or scale.size == 0:
        raise ValueError("empty delta or lambda2 grid")
    sparse = method == "scards"
    lam_s = grids.get("lambda_sparse")
    out = []
    for l1, d, s in itertools.product(lam, delta, scale):
        l2 = float(s * l1 / _mean_segment_size(beta_tilde, d, sparse))
        pt = {"lambda": float(l1), "delta": float(d), "lambda2": l2, "lambda2_scale": float(s)}
        if sparse:
            for ls in ([l1] if lam_s is None else lam_s):
                out.append(dict(pt, lambda_sparse=float(ls)))
        else:
            out.append(pt)
    return out


def fit_point(method: str, X, y, beta_tilde, point: dict, kind: str = "scad", a=None,
              config: SolverConfig | None = None, loss: QuadraticLoss | None = None) -> FitResult:
    """Fit one grid point."""
    spec = PenaltySpec(kind, point["lambda"], a)
    if method == "bcards":
        return fit_bcards(X, y, beta_tilde, spec, config, loss=loss)
    if method == "tv":
        return fit_tv(X, y, spec, config, beta_tilde=beta_tilde, loss=loss)
    if method == "fused_ordered":
        return fit_fused_ordered(X, y, beta_tilde, point["lambda"], config, loss=loss)
    spec2 = spec.with_lambda(point["lambda2"])
    if method == "acards":
        return fit_acards(X, y, beta_tilde, point["delta"], spec, spec2, config, loss=loss)
    if method == "scards":
        return fit_scards(X, y, beta_tilde, point["delta"], spec, spec2,
                          spec.with_lambda(point["lambda_sparse"]), config, loss=loss)
    raise ValueError(f"unknown method {method!r}")


def _evaluate(args):
    method, X, y, beta_tilde, point, kind, a, config, criterion, loss = args
    try:
        fit = fit_point(method, X, y, beta_tilde, point, kind, a, config, loss)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            score = CRITERIA[criterion](X, y, fit)
        return fit, score, None
    except CardsError as exc:
        return None, math.nan, f"{type(exc).__name__}: {exc}"


def _tie_key(row):
    return (row["score"], -row["lambda"], -row.get("delta", 0.0), -row.get("lambda_sparse", 0.0),
            -row.get("lambda2_scale", 0.0))


def grid_search(method: str, X, y, beta_tilde=None, grids: dict | None = None, criterion: str = "bic",
                config: SolverConfig | None = None, kind: str = "scad", a=None,
                workers: int | None = None):
    """Fit every grid point and return (best fit, score table).

    Ties go to the larger lambda, then the larger delta.  Failed points are
    recorded in the table with an ``error`` entry; if every point fails the
    last error is raised.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    bt = None if beta_tilde is None else as_coefficients(beta_tilde, X.shape[1])
    if method in ("bcards", "fused_ordered") and bt is None:
        raise ValueError(f"{method} needs a preliminary estimate")
    points = expand_grid(method, grids, X, y, bt)
    loss = QuadraticLoss.from_data(X, y)
    jobs = [(method, X, y, bt, pt, kind, a, config, criterion, loss) for pt in points]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = [_evaluate(j) for j in jobs]

    table, best, best_key, best_pt, last_err = [], None, None, None, None
    for pt, (fit, score, err) in zip(points, results):
        row = dict(pt, score=score)
        if err is not None:
            row["error"] = err
            last_err = err
        else:
            row.update(df=fit.df, K=fit.partition.K, converged=fit.converged, iterations=fit.iterations)
            key = _tie_key(row)
            if best_key is None or key < best_key:
                best, best_key, best_pt = fit, key, pt
        table.append(row)
    if best is None:
        raise CardsError(f"every grid point failed; last error: {last_err}")
    best.settings["criterion"] = criterion
    best.settings["score"] = best_key[0]
    best.settings["grid_point"] = dict(best_pt)
    return best, table


def scad_lambda_grid(X, y, n_points: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    X = as_matrix(X)
    z = X.T @ as_response(y, X.shape[0]) / X.shape[0]
    top = float(np.max(np.abs(z))) or 1.0
    return np.geomspace(ratio * top, top, n_points)


def select_scad_preliminary(X, y, grid=None, criterion: str = "bic", config: ScadConfig | None = None):
    """SCAD preliminary estimate with lambda' chosen by the criterion.

    Returns (beta, lambda', score table).  Ties go to the larger lambda'.
    """
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    grid = scad_lambda_grid(X, y) if grid is None else np.asarray(grid, dtype=float)
    score_fn = CRITERIA[criterion]
    table, best = [], None
    for lam in grid:
        beta = fit_scad_sparse(X, y, float(lam), config)
        fit = _as_fit(beta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            score = score_fn(X, y, fit)
        table.append({"lambda": float(lam), "score": score, "nonzero": int(np.count_nonzero(beta))})
        key = (score, -float(lam))
        if best is None or key < best[0]:
            best = (key, beta, float(lam))
    return best[1], best[2], table


def _as_fit(beta) -> FitResult:
    """Wrap a sparse coefficient vector; each nonzero counts as one parameter."""
    nz = np.flatnonzero(beta)
    P = Partition(tuple((int(j),) for j in nz), tuple(int(j) for j in np.flatnonzero(beta == 0)))
    return FitResult(beta, P, 0.0, settings={"extract_tol": 0.0})
