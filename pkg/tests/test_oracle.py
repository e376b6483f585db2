import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cards.core import GroupedCoefficients, Partition
from cards.errors import (
    InconsistentOrderError,
    NotApplicableError,
    SingularGramError,
    SingularGroupedGramError,
)
from cards.oracle import (
    ACARDS_BETWEEN,
    ACARDS_WITHIN,
    BCARDS,
    RegularityReport,
    irrepresentability_check,
    kkt_oracle_check,
    l1_lambda_window,
    lambda_bounds,
    oracle_fit,
    regularity_constants,
    variance_pair,
)
from cards.penalty import PenaltySpec
from cards.preliminary import fit_ols
from cards.segmentation import build_pair_graph, rank_map, singleton_segmentation
from cards.solver import lla_solve
from conftest import orthogonal_design


def test_oracle_singletons_is_ols(rng):
    X, y = rng.standard_normal((30, 4)), rng.standard_normal(30)
    np.testing.assert_allclose(oracle_fit(X, y, Partition.singletons(4)).coefficients, fit_ols(X, y), atol=1e-12)


def test_oracle_orthogonal_averages_marginal_ols(rng):
    n = 50
    X = orthogonal_design(n, 6, rng)
    y = rng.standard_normal(n)
    P = Partition(((0, 3, 4), (1,), (2, 5)))
    z = X.T @ y / n
    b = oracle_fit(X, y, P).coefficients
    for g in P.groups:
        np.testing.assert_allclose(b[list(g)], z[list(g)].mean(), atol=1e-12)


def test_oracle_single_group_row_sum(rng):
    X, y = rng.standard_normal((25, 3)), rng.standard_normal(25)
    s = X.sum(axis=1)
    np.testing.assert_allclose(oracle_fit(X, y, Partition(((0, 1, 2),))).coefficients, s @ y / (s @ s))


def test_oracle_standard_errors(rng):
    n = 40
    X = rng.standard_normal((n, 4))
    P = Partition(((0, 1), (2, 3)))
    y = X @ [1, 1, -1, -1] + rng.standard_normal(n)
    res = oracle_fit(X, y, P)
    XA = X @ P.membership(4)
    vals = np.linalg.lstsq(XA, y, rcond=None)[0]
    s2 = np.sum((y - XA @ vals) ** 2) / (n - 2)
    np.testing.assert_allclose(res.group_se, np.sqrt(s2 * np.diag(np.linalg.inv(XA.T @ XA))), rtol=1e-10)


def test_oracle_zero_group_fixed(rng):
    X, y = rng.standard_normal((30, 4)), rng.standard_normal(30)
    res = oracle_fit(X, y, Partition(((0, 1),), (2, 3)))
    assert res.coefficients[2] == 0.0 and res.coefficients[3] == 0.0


def test_oracle_singular_grouped_gram():
    x = np.random.default_rng(0).standard_normal((10, 1))
    X = np.hstack([x, -x, np.ones((10, 1))])
    with pytest.raises(SingularGroupedGramError):
        oracle_fit(X, np.ones(10), Partition(((0, 1), (2,))))


def _kkt_instance(rng, sigma, n=100, lam=0.2):
    X = orthogonal_design(n, 8, rng)
    P = Partition.blocks([2, 2, 2, 2])
    beta = np.repeat([-3.0, -1.0, 1.0, 3.0], 2)
    y = X @ beta + sigma * rng.standard_normal(n)
    return X, y, P, rank_map(beta)


def test_kkt_noiseless_passes(rng):
    X, y, P, tau = _kkt_instance(rng, 0.0)
    r = kkt_oracle_check(X, y, P, tau, PenaltySpec("scad", 0.2))
    assert r.passed and r.max_partial_sum <= 1e-12


def test_kkt_l1_fails_without_flat_tail(rng):
    X, y, P, tau = _kkt_instance(rng, 0.0)
    r = kkt_oracle_check(X, y, P, tau, PenaltySpec("l1", 0.2))
    assert not r.passed and not r.flat_tail_ok


def test_kkt_zero_lambda_with_noise_fails(rng):
    X, y, P, tau = _kkt_instance(rng, 0.5)
    r = kkt_oracle_check(X, y, P, tau, PenaltySpec("scad", 0.0))
    assert not r.passed and not r.partial_sums_ok


def test_kkt_requires_orthogonal_design(rng):
    X, y = rng.standard_normal((30, 4)), rng.standard_normal(30)
    with pytest.raises(NotApplicableError):
        kkt_oracle_check(X, y, Partition.blocks([2, 2]), np.arange(4), PenaltySpec("scad", 0.1))


def test_kkt_agrees_with_solver():
    checked = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        X, y, P, tau = _kkt_instance(rng, 0.5)
        spec = PenaltySpec("scad", 0.3)
        r = kkt_oracle_check(X, y, P, tau, spec)
        if not r.passed:
            continue
        checked += 1
        g = build_pair_graph(singleton_segmentation(tau), spec.lam, 0.0)
        res = lla_solve(X, y, g, spec, spec.with_lambda(0.0), initial=r.oracle)
        assert np.max(np.abs(res.coefficients - r.oracle)) <= 1e-8
    assert checked >= 10


def test_irrep_all_positive_jumps_violated(rng):
    X = orthogonal_design(60, 12, rng)
    P = Partition.blocks([3, 3, 3, 3])
    vals = GroupedCoefficients([-2.0, -1.0, 1.0, 2.0], P.sizes)
    r = irrepresentability_check(X, P, np.arange(12), vals)
    assert not r.satisfied and not r.jump_signs_ok
    assert set(np.unique(r.d0)) <= {-2, -1, 0, 1, 2}


def test_irrep_alternating_margin(rng):
    X = orthogonal_design(60, 12, rng)
    P = Partition.blocks([3, 3, 3, 3])
    vals = GroupedCoefficients([0.0, 2.0, 1.0, 3.0], P.sizes)
    r = irrepresentability_check(X, P, np.arange(12), vals)
    assert r.jump_signs_ok and r.satisfied
    assert r.margin == pytest.approx(1 / 3, abs=1e-12)
    assert r.d0.tolist() == [1.0, -2.0, 2.0, -1.0]


def test_irrep_single_group():
    X = np.eye(4) * 2
    P = Partition(((0, 1, 2, 3),))
    r = irrepresentability_check(X, P, np.arange(4), GroupedCoefficients([1.0], (4,)))
    assert r.satisfied and r.margin == 1.0


def test_irrep_split_group_rejected(rng):
    X = orthogonal_design(20, 4, rng)
    P = Partition.blocks([2, 2])
    with pytest.raises(InconsistentOrderError):
        irrepresentability_check(X, P, [0, 2, 1, 3], GroupedCoefficients([0.0, 1.0], (2, 2)))


def test_regularity_orthogonal(rng):
    X = orthogonal_design(40, 6, rng)
    P = Partition.blocks([2, 4])
    r = regularity_constants(X, P, GroupedCoefficients([-1.0, 2.0], P.sizes))
    np.testing.assert_allclose(r.sigma, 1.0, atol=1e-12)
    np.testing.assert_allclose(r.nu, 0.0, atol=1e-12)
    assert r.b_n == pytest.approx(1.5)
    assert r.c1 == pytest.approx(1.0) and r.c2 == pytest.approx(1.0)


def test_nu_matches_sampling_oracle():
    r = np.random.default_rng(11)
    n = 10
    X = r.standard_normal((n, 4))
    P = Partition(((0, 2, 3), (1,)))
    rep = regularity_constants(X, P)
    M = P.membership(4)
    draws = r.standard_normal((100_000, P.K))
    mu = draws @ M.T
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    for k, g in enumerate(P.groups):
        v = (X[:, list(g)].T @ X @ mu.T / n).T
        dc = np.max(np.abs(v - v.mean(axis=1, keepdims=True)), axis=1)
        best = dc.max()
        assert best <= rep.nu[k] + 1e-12
        assert rep.nu[k] - best <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_regularity_invariants(seed, sizes):
    r = np.random.default_rng(seed)
    p = sum(sizes)
    X = r.standard_normal((p + 5, p))
    P = Partition.blocks(sizes)
    vals = GroupedCoefficients(np.sort(r.standard_normal(len(sizes))), P.sizes)
    rep = regularity_constants(X, P, vals)
    assert 0 <= rep.c1 <= rep.c2
    assert np.all(rep.sigma >= 0) and np.all(rep.nu >= 0) and rep.b_n >= 0
    assert rep.c4 is not None and rep.c4 > 0


def _ortho_report(K):
    return RegularityReport(np.ones(K), np.zeros(K), 1.0, 1.0, 1.0)


def test_lambda_bounds_examples():
    rep = _ortho_report(4)
    b = lambda_bounds(rep, 100, 60, 4, [15] * 4, BCARDS)
    assert b == pytest.approx(math.sqrt(15 * math.log(60) / 100) + math.sqrt(4 * math.log(100) / 100), rel=1e-12)
    assert b == pytest.approx(1.2128, abs=1e-4)
    assert lambda_bounds(rep, 100, 60, 4, [15] * 4, ACARDS_BETWEEN) == b
    w = lambda_bounds(rep, 100, 60, 4, [15] * 4, ACARDS_WITHIN)
    assert w == pytest.approx(0.0523, abs=1e-4)
    one = lambda_bounds(_ortho_report(1), 100, 60, 1, [60], BCARDS)
    assert one == pytest.approx(math.sqrt(60 * math.log(60) / 100))


def test_l1_window_orders():
    rep = RegularityReport(np.ones(4), np.zeros(4), 1.0, 1.0, 5.0)
    lo, hi = l1_lambda_window(rep, 400, 20, [5] * 4, 0.2)
    assert lo == pytest.approx(math.sqrt(5 * math.log(20) / 400) / 0.2)
    assert hi == pytest.approx((5.0 - math.sqrt(4 * math.log(400) / 400)) / math.sqrt(4 / 25))


def test_variance_pair_examples(rng):
    X = rng.standard_normal((30, 5))
    a = rng.standard_normal(5)
    v1, v2 = variance_pair(X, Partition.singletons(5), a)
    assert v1 == pytest.approx(v2, rel=1e-12)
    n = 40
    Xo = orthogonal_design(n, 6, rng)
    P = Partition.blocks([3, 3])
    e = np.zeros(6)
    e[1] = 1.0
    v1, v2 = variance_pair(Xo, P, e)
    assert v1 == pytest.approx(1 / n) and v2 == pytest.approx(1 / (3 * n))


def test_variance_pair_singular():
    X = np.ones((5, 2))
    with pytest.raises(SingularGramError):
        variance_pair(X, Partition.singletons(2), [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.lists(st.integers(0, 3), min_size=2, max_size=8))
def test_variance_pair_ordering(seed, labels):
    r = np.random.default_rng(seed)
    p = len(labels)
    X = r.standard_normal((p + 4, p))
    a = r.standard_normal(p)
    v1, v2 = variance_pair(X, Partition.from_labels(labels), a)
    assert v1 >= v2 - 1e-12
