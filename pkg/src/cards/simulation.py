"""Simulation designs, baselines, the panel extension and the replication runner.

Random streams: replication ``rep`` of a run seeded with ``master_seed``
draws its training data from SeedSequence([master_seed, rep, 0]) and its
test data from SeedSequence([master_seed, rep, 1]).  Within a stream the
design is drawn row-major first, then the noise.
"""
from __future__ import annotations

import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FitResult, GroupedCoefficients, PairGraph, Partition
from .errors import CardsError
from .metrics import false_positives, nmi, prediction_error
from .oracle import oracle_fit
from .penalty import PenaltySpec
from .preliminary import fit_ols
from .segmentation import build_pair_graph, build_segments, rank_map, sorted_gaps
from .solver import (
    QuadraticLoss,
    SolverConfig,
    default_extract_tol,
    extract_partition,
    lla_solve,
)
from .tuning import DELTA_FACTORS, default_workers, grid_search, select_scad_preliminary

log = logging.getLogger(__name__)

EXPERIMENTS = ("exp1", "exp2", "exp3")
DEFAULT_METHODS = {
    "exp1": ("oracle", "ols", "bcards", "acards", "tv", "fused_ordered"),
    "exp2": ("oracle", "oracle0", "oracleG", "ols", "scad", "scards"),
    "exp3": ("oracle", "ols", "acards"),
}
TRAIN, TEST = 0, 1


def stream(master_seed: int, rep: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(rep), int(which)]))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


@dataclass
class RegressionData:
    X: np.ndarray
    y: np.ndarray
    beta: np.ndarray
    truth: Partition
    values: GroupedCoefficients


def _block_values(r: float) -> np.ndarray:
    return np.array([-2.0, -1.0, 1.0, 2.0]) * r


def _regression(rng, n, beta):
    X = rng.standard_normal((n, beta.size))
    y = X @ beta + rng.standard_normal(n)
    return X, y


def gen_experiment1(r: float, seed, n: int = 100) -> RegressionData:
    """p = 60 predictors in four consecutive blocks of 15 at -2r, -r, r, 2r."""
    if not r > 0:
        raise ValueError("r must be > 0")
    P = Partition.blocks([15] * 4)
    vals = GroupedCoefficients(_block_values(r), P.sizes)
    beta = vals.expand(P, 60)
    X, y = _regression(_rng(seed), n, beta)
    return RegressionData(X, y, beta, P, vals)


def gen_experiment2(r: float, seed, n: int = 150) -> RegressionData:
    """The first 60 predictors as in experiment 1 plus 40 null predictors."""
    if not r > 0:
        raise ValueError("r must be > 0")
    P = Partition.blocks([15] * 4, zero=40)
    vals = GroupedCoefficients(_block_values(r), P.sizes)
    beta = vals.expand(P, 100)
    X, y = _regression(_rng(seed), n, beta)
    return RegressionData(X, y, beta, P, vals)


def gen_test_set(beta, size: int, seed):
    rng = _rng(seed)
    return _regression(rng, size, np.asarray(beta, dtype=float))


# --------------------------------------------------------------------------
# panel model  Y_it = X_t' beta_i + e_it
# --------------------------------------------------------------------------

@dataclass
class PanelData:
    Y: np.ndarray            # locations x T
    X: np.ndarray            # T x k
    B: np.ndarray            # locations x k
    truth: list[Partition]   # one per coordinate

    @property
    def n_loc(self) -> int:
        return self.Y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]


N_LOC, K_COEF = 100, 5


def gen_experiment3(T: int, seed, n_loc: int = N_LOC, k: int = K_COEF) -> PanelData:
    """Common predictors X_t, coordinate j split into four blocks of locations.

    Coordinate j (1-based) takes values (-2, -1, 1, 2) + 0.1 (j - 1) on the
    location blocks 1-25, 26-50, 51-75, 76-100.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if n_loc % 4:
        raise ValueError("number of locations must be divisible by 4")
    P = Partition.blocks([n_loc // 4] * 4)
    B = np.empty((n_loc, k))
    for j in range(k):
        B[:, j] = GroupedCoefficients(_block_values(1.0) + 0.1 * j, P.sizes).expand(P, n_loc)
    rng = _rng(seed)
    X = rng.standard_normal((T, k))
    Y = B @ X.T + rng.standard_normal((n_loc, T))
    return PanelData(Y, X, B, [P] * k)


def gen_panel_test(B, size: int, seed):
    rng = _rng(seed)
    X = rng.standard_normal((size, B.shape[1]))
    Y = B @ X.T + rng.standard_normal((B.shape[0], size))
    return X, Y


def panel_loss(panel: PanelData) -> QuadraticLoss:
    """(1/2T) sum_i sum_t (Y_it - X_t' beta_i)^2 over coordinate-major coefficients.

    Coefficient (location i, coordinate j) sits at position j * n_loc + i.
    """
    T = panel.X.shape[0]
    G = panel.X.T @ panel.X / T
    H = np.kron(G, np.eye(panel.n_loc))
    c = (panel.Y @ panel.X / T).T.ravel()
    const = float(np.sum(panel.Y**2)) / (2 * T)
    return QuadraticLoss(H, c, const, T)


def panel_ols(panel: PanelData) -> np.ndarray:
    """Per-location least squares, locations x k."""
    return np.vstack([fit_ols(panel.X, yi) for yi in panel.Y])


def _pack(B):
    return np.asarray(B).T.ravel()


def _unpack(beta, n_loc, k):
    return np.asarray(beta).reshape(k, n_loc).T


@dataclass
class PanelFit:
    B: np.ndarray
    partitions: list[Partition]
    fit: FitResult | None = None
    score: float = math.nan
    table: list = field(default_factory=list)


def panel_pair_graph(B_tilde, delta_factor: float, lambda1: float, lambda2_scale: float, method: str = "acards"):
    """Per-coordinate cross-sectional pair graphs stacked into one.

    delta for coordinate j is delta_factor times the median sorted gap of
    B_tilde[:, j]; bCARDS uses delta = 0.  Returns (graph, lambda2).
    """
    n_loc, k = B_tilde.shape
    I, J, T = [], [], []
    seg_sizes = []
    for j in range(k):
        bt = B_tilde[:, j]
        gaps = sorted_gaps(bt)
        q = float(np.median(gaps)) if gaps.size else 0.0
        delta = 0.0 if method == "bcards" else delta_factor * q
        seg = build_segments(bt, rank_map(bt), delta)
        seg_sizes.extend(len(s) for s in seg.segments)
        g = build_pair_graph(seg, 1.0, 1.0)
        I.append(g.i + j * n_loc)
        J.append(g.j + j * n_loc)
        T.append(g.tier)
    lambda2 = lambda2_scale * lambda1 / float(np.mean(seg_sizes))
    graph = PairGraph(np.concatenate(I), np.concatenate(J), np.concatenate(T), lambda1, lambda2)
    return graph, lambda2


def fit_panel_cards(panel: PanelData, lambda1: float, delta_factor: float = 1.0, lambda2_scale: float = 1.0,
                    method: str = "acards", kind: str = "scad", B_tilde=None,
                    config: SolverConfig | None = None, loss: QuadraticLoss | None = None) -> PanelFit:
    """Joint penalised least squares over all locations and coordinates."""
    n_loc, k = panel.n_loc, panel.k
    Bt = panel_ols(panel) if B_tilde is None else np.asarray(B_tilde, dtype=float)
    loss = loss or panel_loss(panel)
    graph, lambda2 = panel_pair_graph(Bt, delta_factor, lambda1, lambda2_scale, method)
    spec1 = PenaltySpec(kind, lambda1)
    res = lla_solve(None, None, graph, spec1, spec1.with_lambda(lambda2), initial=_pack(Bt),
                    config=config, loss=loss, method=f"panel_{method}")
    res.settings.update(delta_factor=delta_factor, lambda2_scale=lambda2_scale)
    B = _unpack(res.coefficients, n_loc, k)
    tol = res.settings["extract_tol"]
    parts = [extract_partition(B[:, j], tol) for j in range(k)]
    return PanelFit(B, parts, res)


def panel_bic(panel: PanelData, B, partitions) -> float:
    N = panel.Y.size
    rss = float(np.sum((panel.Y - B @ panel.X.T) ** 2))
    df = sum(P.K for P in partitions)
    return N * math.log(rss / N) + math.log(N) * df


def default_panel_lambda_grid(panel: PanelData, n_points: int = 30, ratio: float = 0.01) -> np.ndarray:
    T = panel.X.shape[0]
    Z = panel.Y @ panel.X / T
    top = float(np.max(Z.max(axis=0) - Z.min(axis=0))) or 1.0
    return np.geomspace(ratio * top, top, n_points)


def tune_panel_cards(panel: PanelData, grids: dict | None = None, method: str = "acards", kind: str = "scad",
                     config: SolverConfig | None = None) -> PanelFit:
    """BIC over (lambda, delta factor, lambda2 scale) with N = locations x T."""
    grids = dict(grids or {})
    lam = np.asarray(grids.get("lambda", default_panel_lambda_grid(panel)), dtype=float)
    deltas = (0.0,) if method == "bcards" else tuple(grids.get("delta_factor", DELTA_FACTORS))
    scales = tuple(grids.get("lambda2_scale", (1.0,)))
    Bt = panel_ols(panel)
    loss = panel_loss(panel)
    best, best_key, table = None, None, []
    for l1 in lam:
        for d in deltas:
            for s in scales:
                row = {"lambda": float(l1), "delta_factor": float(d), "lambda2_scale": float(s)}
                try:
                    pf = fit_panel_cards(panel, float(l1), float(d), float(s), method, kind, Bt, config, loss)
                except CardsError as exc:
                    row.update(score=math.nan, error=f"{type(exc).__name__}: {exc}")
                    table.append(row)
                    continue
                score = panel_bic(panel, pf.B, pf.partitions)
                row.update(score=score, df=sum(P.K for P in pf.partitions))
                table.append(row)
                key = (score, -float(l1), -float(d), -float(s))
                if best_key is None or key < best_key:
                    best, best_key = pf, key
    if best is None:
        raise CardsError("every panel grid point failed")
    best.score = best_key[0]
    best.table = table
    return best


def panel_oracle(panel: PanelData) -> np.ndarray:
    """Least squares with every coordinate constrained to its true grouping."""
    n_loc, k = panel.n_loc, panel.k
    loss = panel_loss(panel)
    cols = []
    for j, P in enumerate(panel.truth):
        M = P.membership(n_loc)
        block = np.zeros((n_loc * k, M.shape[1]))
        block[j * n_loc:(j + 1) * n_loc] = M
        cols.append(block)
    M = np.hstack(cols)
    theta = np.linalg.solve(M.T @ loss.gram @ M, M.T @ loss.lin)
    return _unpack(M @ theta, n_loc, k)


def panel_prediction_error(B, X_test, Y_test) -> float:
    return float(np.mean((Y_test - B @ X_test.T) ** 2))


def panel_nmi(B, truth, tol: float | None = None) -> float:
    tol = default_extract_tol(B) if tol is None else tol
    return float(np.mean([nmi(extract_partition(B[:, j], tol), P) for j, P in enumerate(truth)]))


# --------------------------------------------------------------------------
# replication runner
# --------------------------------------------------------------------------

@dataclass
class SimConfig:
    experiment: str = "exp1"
    r: float = 1.0
    T: int = 80
    reps: int = 100
    master_seed: int = 0
    test_size: int = 10_000
    methods: tuple | None = None
    grids: dict | None = None
    workers: int | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.experiment == "exp3":
            if self.T < 1:
                raise ValueError("T must be >= 1")
        elif not self.r > 0:
            raise ValueError("r must be > 0")
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")
        methods = DEFAULT_METHODS[self.experiment] if self.methods is None else tuple(self.methods)
        unknown = set(methods) - set(_KNOWN[self.experiment])
        if unknown:
            raise ValueError(f"unknown methods for {self.experiment}: {sorted(unknown)}")
        self.methods = methods


_KNOWN = {
    "exp1": DEFAULT_METHODS["exp1"],
    "exp2": DEFAULT_METHODS["exp2"],
    "exp3": ("oracle", "ols", "acards", "bcards"),
}


@dataclass
class SimRow:
    rep: int
    method: str
    pe: float
    nmi: float
    fp: float
    seconds: float = 0.0
    error: str | None = None


@dataclass
class SimReport:
    config: SimConfig
    rows: list[SimRow]

    @property
    def methods(self) -> tuple:
        return self.config.methods

    def values(self, method: str, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows if r.method == method and r.error is None])

    def median(self, method: str, metric: str) -> float:
        v = self.values(method, metric)
        v = v[~np.isnan(v)]
        return float(np.median(v)) if v.size else math.nan

    @property
    def medians(self) -> dict:
        return {m: {k: self.median(m, k) for k in ("pe", "nmi", "fp")} for m in self.methods}

    @property
    def runtime(self) -> dict:
        return {m: self.median(m, "seconds") for m in self.methods}

    @property
    def failures(self) -> list[tuple[int, str, str]]:
        return [(r.rep, r.method, r.error) for r in self.rows if r.error is not None]


def _fit_regression(method: str, data: RegressionData, grids: dict | None, cache: dict):
    """Coefficients and partition for one method on one regression data set."""
    X, y, truth = data.X, data.y, data.truth
    p = X.shape[1]
    grids = grids or {}
    if method == "oracle":
        fit = oracle_fit(X, y, truth)
        return fit.coefficients, truth
    if method == "oracle0":
        P = Partition(tuple((j,) for g in truth.groups for j in g), truth.zero_group)
        fit = oracle_fit(X, y, P)
        return fit.coefficients, extract_partition(fit.coefficients, zero_group=True)
    if method == "oracleG":
        groups = truth.groups + ((truth.zero_group,) if truth.zero_group else ())
        fit = oracle_fit(X, y, Partition(groups))
        return fit.coefficients, extract_partition(fit.coefficients, zero_group=True)
    if "ols" not in cache:
        cache["ols"] = fit_ols(X, y)
    if method == "ols":
        b = cache["ols"]
        return b, extract_partition(b, zero_group=bool(truth.zero_group))
    if method in ("scad", "scards"):
        if "scad" not in cache:
            cache["scad"] = select_scad_preliminary(X, y, grids.get("lambda_prime"))
        b_scad, lam_prime, _ = cache["scad"]
        if method == "scad":
            return b_scad, extract_partition(b_scad, zero_group=True)
        g = dict(grids.get("scards", {}))
        if "lambda_sparse" not in g and grids.get("sparse_from_prime", True):
            g["lambda_sparse"] = [lam_prime]
        fit, _ = grid_search("scards", X, y, b_scad, g, workers=1)
        return fit.coefficients, fit.partition
    fit, _ = grid_search(method, X, y, cache["ols"], grids.get(method), workers=1)
    return fit.coefficients, fit.partition


def _run_regression_rep(cfg: SimConfig, rep: int) -> list[SimRow]:
    gen = gen_experiment1 if cfg.experiment == "exp1" else gen_experiment2
    data = gen(cfg.r, stream(cfg.master_seed, rep, TRAIN))
    Xt, yt = gen_test_set(data.beta, cfg.test_size, stream(cfg.master_seed, rep, TEST))
    important = [j for g in data.truth.groups for j in g]
    truth_imp = data.truth.restrict(important)
    rows, cache = [], {}
    for m in cfg.methods:
        t0 = time.perf_counter()
        try:
            b, P = _fit_regression(m, data, cfg.grids, cache)
        except CardsError as exc:
            rows.append(SimRow(rep, m, math.nan, math.nan, math.nan, time.perf_counter() - t0,
                               f"{type(exc).__name__}: {exc}"))
            continue
        pe = prediction_error(b, Xt, yt)
        if cfg.experiment == "exp2":
            score = nmi(P.restrict(important), truth_imp)
            fp = float(false_positives(b, important, default_extract_tol(b)))
        else:
            score = nmi(P, data.truth)
            fp = math.nan
        rows.append(SimRow(rep, m, pe, score, fp, time.perf_counter() - t0))
    return rows


def _run_panel_rep(cfg: SimConfig, rep: int) -> list[SimRow]:
    panel = gen_experiment3(cfg.T, stream(cfg.master_seed, rep, TRAIN))
    Xt, Yt = gen_panel_test(panel.B, cfg.test_size, stream(cfg.master_seed, rep, TEST))
    rows = []
    grids = (cfg.grids or {}).get("panel")
    for m in cfg.methods:
        t0 = time.perf_counter()
        try:
            if m == "oracle":
                B = panel_oracle(panel)
            elif m == "ols":
                B = panel_ols(panel)
            else:
                B = tune_panel_cards(panel, grids, method=m).B
        except CardsError as exc:
            rows.append(SimRow(rep, m, math.nan, math.nan, math.nan, time.perf_counter() - t0,
                               f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(SimRow(rep, m, panel_prediction_error(B, Xt, Yt), panel_nmi(B, panel.truth), math.nan,
                           time.perf_counter() - t0))
    return rows


def run_replication(cfg: SimConfig, rep: int) -> list[SimRow]:
    try:
        if cfg.experiment == "exp3":
            return _run_panel_rep(cfg, rep)
        return _run_regression_rep(cfg, rep)
    except Exception as exc:  # keep the run going; the report flags the rep
        log.error("replication %d failed: %s", rep, traceback.format_exc())
        return [SimRow(rep, m, math.nan, math.nan, math.nan, 0.0, f"{type(exc).__name__}: {exc}")
                for m in cfg.methods]


def _rep_job(args):
    return run_replication(*args)


def run_replications(cfg: SimConfig) -> SimReport:
    """Run every replication (concurrently if workers > 1) and collect rows in rep order."""
    workers = default_workers() if cfg.workers is None else cfg.workers
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    if workers > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.reps)) as pool:
            chunks = list(pool.map(_rep_job, jobs))
    else:
        chunks = [_rep_job(j) for j in jobs]
    rows = [row for chunk in chunks for row in chunk]
    return SimReport(cfg, rows)
