"""Preliminary estimators used to build the ranking and segmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import as_matrix, as_response
from .errors import NoConvergenceError, SingularGramError
from .penalty import PenaltySpec, penalty_derivative, penalty_value


def fit_ols(X, y) -> np.ndarray:
    """Least squares via SVD; refuses rank deficient designs."""
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    n, p = X.shape
    if p > n:
        raise SingularGramError(f"OLS needs p <= n (p={p}, n={n})")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] < 1e-10 * s[0]:
        raise SingularGramError(
            f"design is numerically singular (smallest/largest singular value {s[-1] / s[0]:.2e})"
        )
    return Vt.T @ ((U.T @ y) / s)


@dataclass(frozen=True)
class ScadConfig:
    a: float = 3.7
    max_lla: int = 50
    lla_tol: float = 1e-7
    tol: float = 1e-8
    max_inner: int = 10_000


@njit(cache=True)
def _cd_sweeps(G, c, v, beta, tol, max_sweeps):
    p = G.shape[0]
    g = G @ beta
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(p):
            old = beta[j]
            rj = c[j] - g[j] + G[j, j] * old
            mag = abs(rj) - v[j]
            new = 0.0
            if mag > 0.0:
                new = (mag if rj > 0 else -mag) / G[j, j]
            d = new - old
            if d != 0.0:
                beta[j] = new
                for i in range(p):
                    g[i] += G[i, j] * d
                if abs(d) > biggest:
                    biggest = abs(d)
        if biggest <= tol:
            return sweep
    return -1


def _weighted_lasso_cd(G, c, v, beta, tol, max_sweeps):
    """Cyclic coordinate descent for 0.5 b'Gb - c'b + sum v_j |b_j|.

    Sweeps run in ascending index order; stops when the largest coordinate
    change in a sweep is <= tol.
    """
    beta = np.array(beta, dtype=float)
    sweeps = _cd_sweeps(np.ascontiguousarray(G, dtype=float), np.asarray(c, dtype=float),
                        np.asarray(v, dtype=float), beta, float(tol), int(max_sweeps))
    if sweeps < 0:
        raise NoConvergenceError(max_sweeps, "coordinate descent")
    return beta, sweeps


def scad_objective(X, y, beta, spec: PenaltySpec) -> float:
    r = y - X @ beta
    return float(r @ r / (2 * X.shape[0]) + np.sum(penalty_value(spec, beta)))


def fit_scad_sparse(X, y, lambda_prime: float, config: ScadConfig | None = None,
                    return_trace: bool = False):
    """SCAD-penalised least squares by LLA from the zero vector.

    Each LLA step is a weighted lasso solved by cyclic coordinate descent.
    With ``return_trace`` the per-step objective values are returned too.
    """
    cfg = config or ScadConfig()
    X = as_matrix(X)
    y = as_response(y, X.shape[0])
    n, p = X.shape
    spec = PenaltySpec("scad", lambda_prime, cfg.a)
    G = X.T @ X / n
    c = X.T @ y / n
    if np.any(np.diag(G) <= 0):
        raise SingularGramError("design has a zero column")
    beta = np.zeros(p)
    trace = [scad_objective(X, y, beta, spec)]
    prev_w = None
    for _ in range(cfg.max_lla):
        w = penalty_derivative(spec, beta)
        if prev_w is not None and np.array_equal(w, prev_w):
            break
        new, _ = _weighted_lasso_cd(G, c, w, beta, cfg.tol, cfg.max_inner)
        change = np.max(np.abs(new - beta))
        beta, prev_w = new, w
        trace.append(scad_objective(X, y, beta, spec))
        if change <= cfg.lla_tol:
            break
    return (beta, trace) if return_trace else beta
