"""Oracle grouped least squares and checkable theory quantities.

Everything here takes the true grouping as known: the oracle estimator,
the orthogonal-design KKT conditions under which CARDS reproduces it, the
irrepresentability condition for the L1 fused penalty, the regularity
constants that set the tuning scales, and the variance comparison between
the OLS and grouped estimators of a linear functional.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    FitResult,
    GroupedCoefficients,
    Partition,
    as_coefficients,
    as_matrix,
    as_response,
    validate_partition,
)
from .errors import (
    InconsistentOrderError,
    NotApplicableError,
    SingularGramError,
    SingularGroupedGramError,
)
from .penalty import PenaltySpec, penalty_derivative

_ORTHO_TOL = 1e-8
_RCOND = 1e-10


def grouped_design(X, P: Partition) -> np.ndarray:
    """Columns summed within each group (zero group dropped)."""
    X = as_matrix(X)
    return X @ P.membership(X.shape[1])


def _check_rank(G, err, what):
    s = np.linalg.eigvalsh(G)
    if s.size and (s[0] <= _RCOND * max(s[-1], 1e-300)):
        raise err(f"{what} is singular (eigenvalue ratio {s[0] / max(s[-1], 1e-300):.2e})")


def oracle_fit(X, y, P: Partition) -> FitResult:
    """Least squares constrained to the partition ``P`` (common value per group).

    The zero group, if any, is fixed at 0.  Standard errors of the group
    values use sigma^2 = RSS / (n - K).
    """
    X = as_matrix(X)
    n, p = X.shape
    y = as_response(y, n)
    validate_partition(P, p, complete=True)
    K = P.K
    beta = np.zeros(p)
    se = np.zeros(K)
    if K:
        XA = grouped_design(X, P)
        G = XA.T @ XA
        _check_rank(G, SingularGroupedGramError, "grouped Gram matrix")
        vals = np.linalg.solve(G, XA.T @ y)
        beta = P.membership(p) @ vals
        rss = float(np.sum((y - XA @ vals) ** 2))
        if n > K:
            sigma2 = rss / (n - K)
            se = np.sqrt(sigma2 * np.diag(np.linalg.inv(G)))
        else:
            se = np.full(K, np.nan)
    resid = y - X @ beta
    return FitResult(
        coefficients=beta,
        partition=P,
        objective=float(resid @ resid) / (2 * n),
        iterations=0,
        converged=True,
        settings={"extract_tol": 0.0},
        group_se=se,
        method="oracle",
    )


def _orthogonality_gap(X) -> float:
    X = as_matrix(X)
    n, p = X.shape
    return float(np.max(np.abs(X.T @ X / n - np.eye(p))))


def _runs(P: Partition, tau) -> list[tuple[int, int]]:
    """(start, stop) positions of each group along tau; groups must be contiguous."""
    tau = np.asarray(tau, dtype=np.intp)
    lab = P.labels(tau.size)
    seq = lab[tau]
    change = np.flatnonzero(seq[1:] != seq[:-1]) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [tau.size]))
    if len(starts) != len(set(seq.tolist())):
        raise InconsistentOrderError("some true group is split along the ranking")
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass
class KKTReport:
    passed: bool
    flat_tail_ok: bool
    partial_sums_ok: bool
    min_boundary_gap: float
    max_boundary_derivative: float
    max_partial_sum: float
    bound: float
    oracle: np.ndarray


def kkt_oracle_check(X, y, P: Partition, tau, spec: PenaltySpec) -> KKTReport:
    """Orthogonal-design conditions for the oracle estimator to solve bCARDS.

    Flat tail: p'(|gap|) = 0 for every gap between adjacent groups along
    ``tau``.  Partial sums: the running sums of (oracle - z) from the start
    of each group stay within p'(0+) in absolute value.
    """
    X = as_matrix(X)
    n, p = X.shape
    y = as_response(y, n)
    gap = _orthogonality_gap(X)
    if gap > _ORTHO_TOL:
        raise NotApplicableError(f"design is not orthogonal (max |X'X/n - I| = {gap:.2e})")
    validate_partition(P, p, complete=True)
    if P.zero_group:
        raise NotApplicableError("the check covers partitions without a zero group")
    tau = np.asarray(tau, dtype=np.intp)
    runs = _runs(P, tau)
    z = X.T @ y / n
    beta = oracle_fit(X, y, P).coefficients
    bt, zt = beta[tau], z[tau]
    bound = float(penalty_derivative(spec, 0.0))

    gaps = np.array([bt[a] - bt[a - 1] for a, _ in runs[1:]])
    derivs = penalty_derivative(spec, np.abs(gaps)) if gaps.size else np.zeros(0)
    max_deriv = float(np.max(derivs, initial=0.0))
    min_gap = float(np.min(np.abs(gaps), initial=np.inf))

    worst = 0.0
    for a, b in runs:
        ps = np.cumsum(bt[a:b] - zt[a:b])
        worst = max(worst, float(np.max(np.abs(ps))))
    flat = max_deriv == 0.0
    # the final partial sum of a group is zero up to rounding
    sums_ok = worst <= bound + 1e-12 * max(1.0, float(np.max(np.abs(zt))))
    return KKTReport(flat and sums_ok, flat, sums_ok, min_gap, max_deriv, worst, bound, beta)


@dataclass
class IrrepReport:
    d0: np.ndarray
    b0: np.ndarray
    margin: float
    satisfied: bool
    jump_signs_ok: bool
    order: list[int]


def irrepresentability_check(X, P: Partition, tau, beta_true_grouped: GroupedCoefficients) -> IrrepReport:
    """Evaluate the L1 irrepresentability bound along ``tau``.

    Groups are visited in the order they occur along ``tau`` and the jump
    signs are taken in that order.  A zero group is treated as one more
    group with value 0.  ``margin`` is 1 minus the largest left-hand side,
    so ``satisfied`` means the bound holds for some positive omega.
    """
    X = as_matrix(X)
    n, p = X.shape
    validate_partition(P, p, complete=True)
    vals = np.asarray(beta_true_grouped.values, dtype=float)
    if vals.size != P.K:
        raise ValueError("need one true value per group")
    groups = [tuple(g) for g in P.groups]
    if P.zero_group:
        groups.append(tuple(P.zero_group))
        vals = np.append(vals, 0.0)
    Pfull = Partition(tuple(groups))
    tau = np.asarray(tau, dtype=np.intp)
    runs = _runs(Pfull, tau)
    lab = Pfull.labels(p)
    order = [int(lab[tau[a]]) for a, _ in runs]
    K = len(order)
    v = vals[order]
    s = np.sign(np.diff(v))
    jump_ok = bool(np.all(s[1:] != s[:-1])) if s.size > 1 else True

    d0 = np.zeros(K)
    if K > 1:
        d0[0] = s[0]
        d0[-1] = -s[-1]
        d0[1:-1] = s[1:] - s[:-1]
    ordered = Partition(tuple(groups[k] for k in order))
    XA = grouped_design(X, ordered)
    G = XA.T @ XA
    _check_rank(G, SingularGroupedGramError, "grouped Gram matrix")
    b0 = X.T @ XA @ np.linalg.solve(G, d0)

    if K == 1:
        return IrrepReport(d0, b0, 1.0, True, True, order)
    worst = 0.0
    bt = b0[tau]
    for k, (a, b) in enumerate(runs):
        m = b - a
        for j in range(1, m):
            theta = j / m
            upper = bt[a:a + j].mean()
            lower = bt[a + j:b].mean()
            corr = m**2 * theta * (1 - theta) * (upper - lower)
            if k == 0:
                e = theta * s[0]
            elif k == K - 1:
                e = (1 - theta) * s[-1]
            else:
                e = (1 - theta) * s[k - 1] + theta * s[k]
            worst = max(worst, abs(e + corr))
    margin = 1.0 - worst
    return IrrepReport(d0, b0, margin, margin > 0, jump_ok, order)


@dataclass
class RegularityReport:
    sigma: np.ndarray
    nu: np.ndarray
    c1: float
    c2: float
    b_n: float
    c4: float | None = None


def regularity_constants(X, P: Partition, beta_true_grouped: GroupedCoefficients | None = None) -> RegularityReport:
    """sigma_k, nu_k, extreme grouped-Gram eigenvalues and the half minimal gap.

    nu_k is the largest deviation from centrality of (1/n) X_k' X mu over
    unit vectors mu constant on groups.  Writing mu = M D^{-1} eta with
    D = diag(sqrt|A_k|) and |eta| = 1, it equals the largest Euclidean norm
    of a centred row of (1/n) X_k' X_A D^{-1}.
    """
    X = as_matrix(X)
    n, p = X.shape
    validate_partition(P, p, complete=True)
    sizes = np.asarray(P.sizes, dtype=float)
    XA = grouped_design(X, P)
    Dinv = 1.0 / np.sqrt(sizes)
    W_all = X.T @ XA / n * Dinv
    sigma, nu = [], []
    for g in P.groups:
        g = list(g)
        Xk = X[:, g]
        sigma.append(float(np.linalg.eigvalsh(Xk.T @ Xk / n)[-1]))
        W = W_all[g]
        W = W - W.mean(axis=0)
        nu.append(float(np.max(np.linalg.norm(W, axis=1))))
    if P.K:
        ev = np.linalg.eigvalsh((XA * Dinv).T @ (XA * Dinv) / n)
        c1, c2 = max(float(ev[0]), 0.0), float(ev[-1])
    else:
        c1 = c2 = 0.0
    b_n = np.inf
    if beta_true_grouped is not None and beta_true_grouped.K > 1:
        v = np.sort(np.asarray(beta_true_grouped.values, dtype=float))
        b_n = float(np.min(np.diff(v))) / 2
    c4 = None
    if p < n:
        Ginv = np.linalg.pinv(X.T @ X)
        c4 = float(n * np.max(np.abs(Ginv)))
    return RegularityReport(np.array(sigma), np.array(nu), c1, c2, b_n, c4)


BCARDS, ACARDS_BETWEEN, ACARDS_WITHIN = "bcards", "acards_between", "acards_within"


def lambda_bounds(report: RegularityReport, n: int, p: int, K: int, group_sizes, variant: str = BCARDS) -> float:
    """Plug-in tuning scale that the penalty level should dominate.

    Between-group scales use |V_kh| = 1.  With a single group there are no
    jumps to protect and only the noise term remains.
    """
    sizes = np.asarray(group_sizes, dtype=float)
    sig, nu = np.asarray(report.sigma), np.asarray(report.nu)
    if not (sizes.size == sig.size == nu.size == K):
        raise ValueError("report, K and group sizes disagree")
    lp, ln = np.log(p), np.log(n)
    if variant in (BCARDS, ACARDS_BETWEEN):
        noise = np.sqrt(sig * sizes * lp / n)
        jump = (1 + nu * sizes) * np.sqrt(K * ln / n) if K > 1 else 0.0
        return float(np.max(noise + jump))
    if variant == ACARDS_WITHIN:
        return float(np.max(np.sqrt(lp / (n * sizes)) + nu * np.sqrt(K * ln / (n * sizes))))
    raise ValueError(f"unknown variant {variant!r}")


def l1_lambda_window(report: RegularityReport, n: int, p: int, group_sizes, omega: float) -> tuple[float, float]:
    """(lower, upper) scales for the L1 fused penalty.

    The lower end is max_k sqrt(sigma_k |A_k| log p / n) / omega, the upper
    end solves b_n = sqrt(K log n / n) + lambda * sqrt(sum 1/|A_k|^2).
    """
    if omega <= 0:
        raise ValueError("omega must be > 0")
    sizes = np.asarray(group_sizes, dtype=float)
    K = sizes.size
    lo = float(np.max(np.sqrt(np.asarray(report.sigma) * sizes * np.log(p) / n))) / omega
    hi = (report.b_n - np.sqrt(K * np.log(n) / n)) / np.sqrt(np.sum(1.0 / sizes**2))
    return lo, float(hi)


def variance_pair(X, P: Partition, a) -> tuple[float, float]:
    """Variances (up to sigma^2) of a'beta under OLS and under grouped LS.

    v1 = a'(X'X)^{-1}a and v2 = a'M(M'X'XM)^{-1}M'a with M(j, k) = |A_k|^{-1/2} 1{j in A_k}.
    """
    X = as_matrix(X)
    p = X.shape[1]
    a = as_coefficients(a, p)
    validate_partition(P, p, complete=True)
    G = X.T @ X
    _check_rank(G, SingularGramError, "X'X")
    v1 = float(a @ np.linalg.solve(G, a))
    M = P.membership(p) / np.sqrt(np.asarray(P.sizes, dtype=float))
    GM = M.T @ G @ M
    _check_rank(GM, SingularGroupedGramError, "grouped Gram matrix")
    Ma = M.T @ a
    v2 = float(Ma @ np.linalg.solve(GM, Ma))
    return v1, v2
