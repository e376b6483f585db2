"""CARDS objective and its optimisation.

The nonconvex objective is handled by local linear approximation (LLA):
every outer step replaces each folded-concave term by its tangent, giving
a convex weighted graph-fused lasso

    0.5 b'Hb - c'b + sum_e w_e |b_i - b_j| + sum_j v_j |b_j|

with H = X'X/n and c = X'y/n.  That subproblem is solved by ADMM on the
stacked difference operator, followed by an active-set polish that solves
the reduced least-squares problem exactly once the fused structure is
known.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import (
    BETWEEN,
    WITHIN,
    FitResult,
    PairGraph,
    Partition,
    Segmentation,
    as_coefficients,
    as_matrix,
    as_response,
)
from .errors import NoConvergenceError
from .penalty import L1, PenaltySpec, penalty_derivative, penalty_value
from .segmentation import (
    build_pair_graph,
    build_segments,
    build_segments_sparse,
    rank_map,
    singleton_segmentation,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_lla: int = 20
    min_lla: int = 1
    lla_tol: float = 1e-7
    max_admm: int = 20_000
    admm_tol: float = 1e-7
    rho: float = 1.0
    balance_every: int = 10
    polish: bool = True
    extract_tol: float | None = None
    record_path: bool = False


DEFAULT_CONFIG = SolverConfig()


# --------------------------------------------------------------------------
# quadratic loss
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadraticLoss:
    """0.5 b'Hb - c'b + const, i.e. (1/2n)||y - Xb||^2 written via the Gram matrix."""

    gram: np.ndarray
    lin: np.ndarray
    const: float
    n: int

    @classmethod
    def from_data(cls, X, y) -> "QuadraticLoss":
        X = as_matrix(X)
        y = as_response(y, X.shape[0])
        n = X.shape[0]
        return cls(X.T @ X / n, X.T @ y / n, float(y @ y) / (2 * n), n)

    @property
    def p(self) -> int:
        return self.lin.size

    def value(self, beta) -> float:
        return float(0.5 * beta @ self.gram @ beta - self.lin @ beta + self.const)

    def grad(self, beta) -> np.ndarray:
        return self.gram @ beta - self.lin

    def restrict(self, support) -> "QuadraticLoss":
        s = np.asarray(support, dtype=np.intp)
        return QuadraticLoss(self.gram[np.ix_(s, s)], self.lin[s], self.const, self.n)


@dataclass(frozen=True, eq=False)
class WeightedGraphProblem:
    """Convex subproblem: loss + sum_e w_e|b_i - b_j| + sum_j v_j|b_j| on a support."""

    loss: QuadraticLoss
    i: np.ndarray
    j: np.ndarray
    pair_weights: np.ndarray
    coef_weights: np.ndarray | None = None
    support: np.ndarray | None = None

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.intp)
        j = np.asarray(self.j, dtype=np.intp)
        w = np.asarray(self.pair_weights, dtype=float)
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "pair_weights", w)
        if not (i.shape == j.shape == w.shape):
            raise ValueError("pair arrays and weights must have equal length")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("pair weights must be finite and >= 0")
        p = self.loss.p
        if self.coef_weights is not None:
            v = np.asarray(self.coef_weights, dtype=float)
            if v.shape != (p,) or np.any(~np.isfinite(v)) or np.any(v < 0):
                raise ValueError("coefficient weights must be finite, >= 0, length p")
            object.__setattr__(self, "coef_weights", v)
        sup = np.arange(p) if self.support is None else np.unique(np.asarray(self.support, dtype=np.intp))
        object.__setattr__(self, "support", sup)
        inside = np.zeros(p, dtype=bool)
        inside[sup] = True
        if i.size and (not inside[i].all() or not inside[j].all()):
            raise ValueError("every penalised pair must lie inside the support")

    @classmethod
    def from_data(cls, X, y, i, j, pair_weights, coef_weights=None, support=None):
        return cls(QuadraticLoss.from_data(X, y), i, j, pair_weights, coef_weights, support)

    def objective(self, beta) -> float:
        v = self.loss.value(beta)
        v += float(self.pair_weights @ np.abs(beta[self.i] - beta[self.j]))
        if self.coef_weights is not None:
            v += float(self.coef_weights @ np.abs(beta))
        return v


# --------------------------------------------------------------------------
# ADMM for the weighted subproblem (all indices local to the support)
# --------------------------------------------------------------------------

class _Operator:
    """Stacked difference/identity operator D with rows (i - j) then (k)."""

    def __init__(self, p, I, J, S):
        self.p, self.I, self.J, self.S = p, I, J, S
        self.mp = I.size
        self.m = I.size + S.size

    def apply(self, b):
        return np.concatenate((b[self.I] - b[self.J], b[self.S]))

    def adjoint(self, v):
        p, mp = self.p, self.mp
        out = np.bincount(self.I, v[:mp], minlength=p) - np.bincount(self.J, v[:mp], minlength=p)
        if self.S.size:
            out += np.bincount(self.S, v[mp:], minlength=p)
        return out

    def gram(self):
        p = self.p
        L = np.zeros((p, p))
        np.add.at(L, (self.I, self.I), 1.0)
        np.add.at(L, (self.J, self.J), 1.0)
        np.add.at(L, (self.I, self.J), -1.0)
        np.add.at(L, (self.J, self.I), -1.0)
        np.add.at(L, (self.S, self.S), 1.0)
        return L


def _factor(A):
    try:
        return ("chol", cho_factor(A, lower=True, check_finite=False))
    except LinAlgError:
        return ("pinv", np.linalg.pinv(A, hermitian=True))


def _solve(fac, b):
    kind, f = fac
    return cho_solve(f, b, check_finite=False) if kind == "chol" else f @ b


def _least_squares(H, c):
    fac = _factor(H)
    return _solve(fac, c)


def _admm(H, c, op: _Operator, w, beta0, dual0, cfg: SolverConfig, rho0):
    """Scaled-form ADMM; returns beta, z, unscaled duals, stats."""
    m = op.m
    rho = rho0
    DtD = op.gram()
    fac = _factor(H + rho * DtD)
    beta = beta0.copy()
    z = op.apply(beta)
    u = dual0 / rho
    thr = cfg.admm_tol * np.sqrt(m)
    r = s = np.inf
    for it in range(1, cfg.max_admm + 1):
        beta = _solve(fac, c + rho * op.adjoint(z - u))
        Db = op.apply(beta)
        v = Db + u
        z_old = z
        z = np.sign(v) * np.maximum(np.abs(v) - w / rho, 0.0)
        u = v - z
        r = np.linalg.norm(Db - z)
        s = rho * np.linalg.norm(op.adjoint(z - z_old))
        if r <= thr and s <= thr:
            break
        if it % cfg.balance_every == 0:
            if r > 10 * s:
                rho *= 2.0
                u /= 2.0
                fac = _factor(H + rho * DtD)
            elif s > 10 * r:
                rho /= 2.0
                u *= 2.0
                fac = _factor(H + rho * DtD)
    else:
        raise NoConvergenceError(cfg.max_admm, "ADMM")
    return beta, z, rho * u, {"admm_iterations": it, "primal": float(r), "dual": float(s), "rho": rho}


def _polish(H, c, op: _Operator, w, beta, z, fuse_tol):
    """Exact minimiser on the fused/zero structure read off the ADMM split variable.

    Returns None when the structure is inconsistent (sign flips).
    """
    p, mp = op.p, op.mp
    zp, zc = z[:mp], z[mp:]
    fused = np.abs(zp) <= fuse_tol
    g = coo_matrix(
        (np.ones(int(fused.sum())), (op.I[fused], op.J[fused])), shape=(p, p)
    )
    ncomp, comp = connected_components(g, directed=False)
    zero_coord = np.abs(zc) <= fuse_tol
    zero_comp = np.zeros(ncomp, dtype=bool)
    zero_comp[comp[op.S[zero_coord]]] = True

    # sign-fixed linear terms from rows that stay active
    act_p = comp[op.I] != comp[op.J]
    act_c = ~zero_comp[comp[op.S]]
    lin = np.zeros(op.m)
    lin[:mp][act_p] = w[:mp][act_p] * np.sign(zp[act_p])
    lin[mp:][act_c] = w[mp:][act_c] * np.sign(zc[act_c])
    rhs = c - op.adjoint(lin)

    free = np.flatnonzero(~zero_comp)
    col = -np.ones(ncomp, dtype=np.intp)
    col[free] = np.arange(free.size)
    M = np.zeros((p, free.size))
    rows = np.flatnonzero(col[comp] >= 0)
    M[rows, col[comp[rows]]] = 1.0
    if free.size:
        A = M.T @ H @ M
        theta = np.linalg.lstsq(A, M.T @ rhs, rcond=None)[0]
        new = M @ theta
    else:
        new = np.zeros(p)
    Dn = op.apply(new)
    act = np.concatenate((act_p, act_c))
    if np.any(np.sign(Dn[act]) != np.sign(z[act])):
        return None
    return new


def _kkt_residual(H, c, op, w, beta, dual, fuse_tol):
    Db = op.apply(beta)
    y = np.where(np.abs(Db) > fuse_tol, w * np.sign(Db), np.clip(dual, -w, w))
    return float(np.max(np.abs(H @ beta - c + op.adjoint(y)), initial=0.0))


def _solve_local(loss: QuadraticLoss, I, J, wp, S, wc, beta0, dual0, rho0, cfg: SolverConfig):
    """Solve the subproblem with zero-weight rows dropped; all indices local."""
    H, c = loss.gram, loss.lin
    p = c.size
    keep_p = wp > 0
    keep_c = wc > 0
    op = _Operator(p, I[keep_p], J[keep_p], S[keep_c])
    w = np.concatenate((wp[keep_p], wc[keep_c]))
    stats = {"rows": op.m}
    if op.m == 0:
        beta = _least_squares(H, c)
        stats.update(admm_iterations=0, primal=0.0, dual=0.0, kkt=float(np.max(np.abs(H @ beta - c))),
                     polished=False, rho=rho0)
        return beta, np.zeros(I.size + S.size), rho0, stats
    d0 = np.concatenate((dual0[: I.size][keep_p], dual0[I.size:][keep_c]))
    d0 = np.clip(d0, -w, w)
    beta, z, dual, info = _admm(H, c, op, w, beta0, d0, cfg, rho0)
    stats.update(info)
    scale = max(1.0, float(np.max(np.abs(beta))))
    fuse_tol = cfg.admm_tol * scale
    polished = False
    if cfg.polish:
        cand = _polish(H, c, op, w, beta, z, fuse_tol)
        if cand is not None:
            f_admm = loss.value(beta) + float(w @ np.abs(op.apply(beta)))
            f_pol = loss.value(cand) + float(w @ np.abs(op.apply(cand)))
            if f_pol <= f_admm + 1e-12 * max(1.0, abs(f_admm)):
                beta, polished = cand, True
    stats["polished"] = polished
    stats["kkt"] = _kkt_residual(H, c, op, w, beta, dual, fuse_tol)
    full_dual = np.zeros(I.size + S.size)
    full_dual[: I.size][keep_p] = dual[: op.mp]
    full_dual[I.size:][keep_c] = dual[op.mp:]
    return beta, full_dual, info["rho"], stats


def solve_weighted_graph_lasso(prob: WeightedGraphProblem, config: SolverConfig | None = None,
                               initial=None, return_info: bool = False):
    """Minimise the convex weighted graph-fused lasso of ``prob``.

    Coordinates outside ``prob.support`` are fixed at zero.
    """
    cfg = config or DEFAULT_CONFIG
    p = prob.loss.p
    sup = prob.support
    pos = -np.ones(p, dtype=np.intp)
    pos[sup] = np.arange(sup.size)
    loss = prob.loss.restrict(sup)
    I, J = pos[prob.i], pos[prob.j]
    S = np.arange(sup.size)
    wc = np.zeros(sup.size) if prob.coef_weights is None else prob.coef_weights[sup]
    b0 = np.zeros(sup.size) if initial is None else as_coefficients(initial, p)[sup]
    beta_s, _, _, stats = _solve_local(
        loss, I, J, prob.pair_weights, S, wc, b0, np.zeros(I.size + S.size), cfg.rho, cfg
    )
    beta = np.zeros(p)
    beta[sup] = beta_s
    return (beta, stats) if return_info else beta


# --------------------------------------------------------------------------
# partition extraction
# --------------------------------------------------------------------------

def default_extract_tol(beta) -> float:
    return 1e-4 * max(1.0, float(np.max(np.abs(beta), initial=0.0)))


def extract_partition(beta, tol: float | None = None, zero_group: bool = False) -> Partition:
    """Group coefficients whose sorted consecutive gaps are <= tol (chaining).

    With ``zero_group`` coefficients of magnitude <= tol go to the zero group.
    """
    beta = as_coefficients(beta)
    tol = default_extract_tol(beta) if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tol must be > 0")
    idx = np.arange(beta.size)
    zero = np.zeros(0, dtype=np.intp)
    if zero_group:
        small = np.abs(beta) <= tol
        zero, idx = idx[small], idx[~small]
    order = idx[np.argsort(beta[idx], kind="stable")]
    cuts = np.flatnonzero(np.diff(beta[order]) > tol) + 1
    groups = tuple(tuple(sorted(int(i) for i in g)) for g in np.split(order, cuts) if g.size)
    return Partition(groups, tuple(int(i) for i in zero))


# --------------------------------------------------------------------------
# LLA
# --------------------------------------------------------------------------

def penalised_objective(loss: QuadraticLoss, beta, graph: PairGraph, spec1, spec2, sparsity=None, support=None):
    d = np.abs(beta[graph.i] - beta[graph.j])
    val = loss.value(beta)
    if graph.i.size:
        btw = graph.tier == BETWEEN
        val += float(np.sum(penalty_value(spec1, d[btw])) + np.sum(penalty_value(spec2, d[~btw])))
    if sparsity is not None:
        sup = np.arange(beta.size) if support is None else support
        val += float(np.sum(penalty_value(sparsity, beta[sup])))
    return val


def _lla(loss: QuadraticLoss, graph: PairGraph, spec1: PenaltySpec, spec2: PenaltySpec,
         sparsity: PenaltySpec | None, support, initial, cfg: SolverConfig):
    p = loss.p
    sup = np.arange(p) if support is None else np.unique(np.asarray(support, dtype=np.intp))
    pos = -np.ones(p, dtype=np.intp)
    pos[sup] = np.arange(sup.size)
    if graph.i.size and (np.any(pos[graph.i] < 0) or np.any(pos[graph.j] < 0)):
        raise ValueError("pair graph reaches outside the support")
    local = loss.restrict(sup)
    I, J = pos[graph.i], pos[graph.j]
    btw = graph.tier == BETWEEN
    S = np.arange(sup.size) if sparsity is not None else np.zeros(0, dtype=np.intp)

    if initial is None:
        b = _least_squares(local.gram, local.lin)
    else:
        b = as_coefficients(initial, p)[sup].copy()

    def full(bs):
        out = np.zeros(p)
        out[sup] = bs
        return out

    def objective(bs):
        return penalised_objective(loss, full(bs), graph, spec1, spec2, sparsity, sup)

    trace = [objective(b)]
    path = [full(b)] if cfg.record_path else None
    stats_all = []
    dual = np.zeros(I.size + S.size)
    rho = cfg.rho
    prev = None
    converged = False
    it = 0
    for it in range(1, cfg.max_lla + 1):
        d = np.abs(b[I] - b[J])
        wp = np.where(btw, penalty_derivative(spec1, d), penalty_derivative(spec2, d)) if I.size else np.zeros(0)
        wc = penalty_derivative(sparsity, b) if sparsity is not None else np.zeros(0)
        weights = np.concatenate((wp, wc))
        if prev is not None and it > cfg.min_lla and np.array_equal(weights, prev):
            # identical subproblem: the previous solution is already its minimiser
            it -= 1
            converged = True
            break
        new, dual, rho, stats = _solve_local(local, I, J, wp, S, wc, b, dual, rho, cfg)
        change = float(np.max(np.abs(new - b), initial=0.0))
        stats["change"] = change
        stats_all.append(stats)
        b, prev = new, weights
        trace.append(objective(b))
        if path is not None:
            path.append(full(b))
        if change <= cfg.lla_tol and it >= cfg.min_lla:
            converged = True
            break
    return full(b), max(it, 1), converged, trace, stats_all, path


def _result(beta, converged, it, trace, stats, path, cfg, zero_group, settings, method):
    tol = cfg.extract_tol if cfg.extract_tol is not None else default_extract_tol(beta)
    settings = dict(settings)
    settings.update(extract_tol=tol, lla_tol=cfg.lla_tol, admm_tol=cfg.admm_tol,
                    max_lla=cfg.max_lla, max_admm=cfg.max_admm)
    return FitResult(
        coefficients=beta,
        partition=extract_partition(beta, tol, zero_group=zero_group),
        objective=trace[-1],
        iterations=it,
        converged=converged,
        inner_stats=stats,
        settings=settings,
        objective_trace=trace,
        path=path,
        method=method,
    )


def _warn_l1(spec: PenaltySpec, where: str):
    if spec.kind == L1 and spec.lam > 0:
        warnings.warn(f"L1 penalty in {where}: no flat tail, estimates of large gaps stay biased",
                      stacklevel=3)


def lla_solve(X, y, graph: PairGraph, spec1: PenaltySpec, spec2: PenaltySpec,
              sparsity: PenaltySpec | None = None, initial=None, config: SolverConfig | None = None,
              support=None, loss: QuadraticLoss | None = None, method: str = "lla") -> FitResult:
    """Run LLA on the CARDS objective defined by ``graph``.

    ``spec1`` is applied to between-segment pairs and ``spec2`` to
    within-segment pairs; ``sparsity`` (if given) coordinatewise on the
    support.  ``loss`` may be passed instead of (X, y).
    """
    cfg = config or DEFAULT_CONFIG
    loss = loss or QuadraticLoss.from_data(X, y)
    beta, it, conv, trace, stats, path = _lla(loss, graph, spec1, spec2, sparsity, support, initial, cfg)
    settings = {
        "spec_between": spec1.to_dict(),
        "spec_within": spec2.to_dict(),
        "spec_sparsity": None if sparsity is None else sparsity.to_dict(),
        "lambda1": spec1.lam,
        "lambda2": spec2.lam,
        "n_between": graph.n_between,
        "n_within": graph.n_within,
    }
    zero = sparsity is not None or support is not None
    return _result(beta, conv, it, trace, stats, path, cfg, zero, settings, method)


# --------------------------------------------------------------------------
# CARDS entry points
# --------------------------------------------------------------------------

def _fit_on_segmentation(X, y, seg: Segmentation, spec1, spec2, sparsity, initial, cfg, method, loss=None,
                         extra=None):
    graph = build_pair_graph(seg, spec1.lam, spec2.lam)
    support = seg.support() if (seg.zero_set or sparsity is not None) else None
    if support is not None:
        support = np.sort(np.asarray(support, dtype=np.intp))
    res = lla_solve(X, y, graph, spec1, spec2, sparsity, initial, cfg, support=support, loss=loss,
                    method=method)
    res.settings.update(delta=seg.delta, n_segments=seg.L, **(extra or {}))
    return res


def fit_bcards(X, y, beta_tilde, spec: PenaltySpec, config: SolverConfig | None = None,
               loss: QuadraticLoss | None = None) -> FitResult:
    """Fused penalty along the ranking of ``beta_tilde`` (one pair per neighbour)."""
    cfg = config or DEFAULT_CONFIG
    bt = as_coefficients(beta_tilde)
    _warn_l1(spec, "bCARDS")
    seg = singleton_segmentation(rank_map(bt))
    return _fit_on_segmentation(X, y, seg, spec, spec.with_lambda(0.0), None, bt, cfg, "bcards", loss)


def fit_acards(X, y, beta_tilde, delta: float, spec1: PenaltySpec, spec2: PenaltySpec,
               config: SolverConfig | None = None, loss: QuadraticLoss | None = None) -> FitResult:
    """Hybrid pairwise penalty on the delta-gap segmentation of ``beta_tilde``."""
    cfg = config or DEFAULT_CONFIG
    bt = as_coefficients(beta_tilde)
    seg = build_segments(bt, rank_map(bt), delta)
    return _fit_on_segmentation(X, y, seg, spec1, spec2, None, bt, cfg, "acards", loss)


def fit_scards(X, y, beta_tilde, delta: float, spec1: PenaltySpec, spec2: PenaltySpec,
               sparsity_spec: PenaltySpec, config: SolverConfig | None = None,
               loss: QuadraticLoss | None = None) -> FitResult:
    """Hybrid penalty on the preliminary support plus a coordinatewise penalty.

    Coefficients outside the support of ``beta_tilde`` are fixed at zero.
    """
    cfg = config or DEFAULT_CONFIG
    bt = as_coefficients(beta_tilde)
    seg = build_segments_sparse(bt, delta)
    res = _fit_on_segmentation(X, y, seg, spec1, spec2, sparsity_spec, bt, cfg, "scards", loss,
                               extra={"lambda_sparse": sparsity_spec.lam})
    return res


def fit_tv(X, y, spec: PenaltySpec, config: SolverConfig | None = None, beta_tilde=None,
           loss: QuadraticLoss | None = None) -> FitResult:
    """Exhaustive pairwise penalty (a single segment holding every index)."""
    cfg = config or DEFAULT_CONFIG
    loss = loss or QuadraticLoss.from_data(X, y)
    p = loss.p
    seg = Segmentation((tuple(range(p)),), (), float("inf"))
    initial = None if beta_tilde is None else as_coefficients(beta_tilde, p)
    return _fit_on_segmentation(X, y, seg, spec.with_lambda(0.0), spec, None, initial, cfg, "tv", loss)


def fit_fused_ordered(X, y, beta_tilde, lam: float, config: SolverConfig | None = None,
                      loss: QuadraticLoss | None = None) -> FitResult:
    """Ordinary (L1) fused lasso along the ranking of ``beta_tilde``."""
    cfg = config or DEFAULT_CONFIG
    bt = as_coefficients(beta_tilde)
    seg = singleton_segmentation(rank_map(bt))
    spec = PenaltySpec(L1, lam)
    res = _fit_on_segmentation(X, y, seg, spec, spec.with_lambda(0.0), None, bt, cfg, "fused_ordered", loss)
    return res


def with_config(config: SolverConfig | None, **changes) -> SolverConfig:
    return replace(config or DEFAULT_CONFIG, **changes)
