"""Evaluation metrics for fitted groupings and predictions."""
from __future__ import annotations

import numpy as np

from .core import Partition, as_coefficients, as_matrix, as_response
from .errors import MismatchedUniverseError


def _labels(P: Partition) -> np.ndarray:
    idx = P.indices()
    lab = P.labels(max(idx) + 1 if idx else 0)
    return lab


def nmi(C: Partition, D: Partition) -> float:
    """Normalised mutual information I(C;D) / ((H(C) + H(D)) / 2).

    Natural logs, positive entropies; the zero group counts as a group.
    Two single-group partitions give 1.
    """
    ic, id_ = sorted(C.indices()), sorted(D.indices())
    if ic != id_ or len(set(ic)) != len(ic):
        raise MismatchedUniverseError("partitions cover different index sets")
    p = len(ic)
    if p == 0:
        raise MismatchedUniverseError("partitions are empty")
    lc, ld = _labels(C)[ic], _labels(D)[ic]
    _, a = np.unique(lc, return_inverse=True)
    _, b = np.unique(ld, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    pij = table / p
    pi, pj = pij.sum(axis=1), pij.sum(axis=0)
    hc = -float(np.sum(pi * np.log(pi)))
    hd = -float(np.sum(pj * np.log(pj)))
    if hc == 0.0 and hd == 0.0:
        return 1.0
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / np.outer(pi, pj)[nz])))
    return float(np.clip(mi / ((hc + hd) / 2), 0.0, 1.0))


def prediction_error(beta_hat, X_test, y_test) -> float:
    """Mean squared prediction error over the test rows."""
    X = as_matrix(X_test)
    y = as_response(y_test, X.shape[0])
    r = y - X @ as_coefficients(beta_hat, X.shape[1])
    return float(np.mean(r**2))


def false_positives(beta_hat, true_support, tol: float = 1e-8) -> int:
    """Coefficients outside ``true_support`` with magnitude above ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    b = as_coefficients(beta_hat)
    null = np.ones(b.size, dtype=bool)
    null[np.asarray(list(true_support), dtype=np.intp)] = False
    return int(np.count_nonzero(np.abs(b[null]) > tol))


def cumulative_rss(sq_errors, rho: float) -> np.ndarray:
    """Discounted running sum of squared errors.

    ``sq_errors`` holds squared prediction errors, entities x time (a 1-D
    input is one entity).  Time s (1-based) is weighted by
    rho ** floor(s / 10).
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    E = np.asarray(sq_errors, dtype=float)
    if E.ndim == 1:
        E = E[None, :]
    if np.any(E < 0):
        raise ValueError("squared errors must be nonnegative")
    s = np.arange(1, E.shape[1] + 1)
    per_time = np.sum(E, axis=0) * rho ** (s // 10)
    return np.cumsum(per_time)
