"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line (also collected in
the terminal summary) before asserting.  Tolerances are fixed by the
acceptance contract and are not tuned to the results.
"""
import json
import os
import subprocess
import sys
import time
import timeit
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from cards.core import GroupedCoefficients, Partition
from cards.metrics import nmi
from cards.oracle import (
    ACARDS_BETWEEN,
    ACARDS_WITHIN,
    irrepresentability_check,
    l1_lambda_window,
    lambda_bounds,
    oracle_fit,
    regularity_constants,
    variance_pair,
)
from cards.penalty import PenaltySpec, penalty_derivative, penalty_value
from cards.preliminary import fit_ols
from cards.segmentation import (
    build_pair_graph,
    build_segments,
    default_delta,
    rank_map,
    singleton_segmentation,
)
from cards.simulation import SimConfig, run_replications
from cards.solver import SolverConfig, fit_acards, lla_solve
from conftest import orthogonal_design


# --------------------------------------------------------------------------
# 1. penalty calculus
# --------------------------------------------------------------------------

def test_penalty_calculus(verdict):
    t0 = time.perf_counter()
    worst, tail_exact = 0.0, True
    for spec in (PenaltySpec("scad", 0.7), PenaltySpec("mcp", 0.7)):
        al = spec.a * spec.lam
        grid = np.linspace(al / 500, 2 * al, 500)
        closed = penalty_value(spec, grid)
        for t, c in zip(grid, closed):
            num, _ = quad(lambda s: float(penalty_derivative(spec, s)), 0.0, t,
                          points=[x for x in (spec.lam, al) if x < t], epsabs=1e-13, epsrel=1e-12)
            worst = max(worst, abs(num - c) / abs(c))
        tail = grid[grid >= al]
        cap = penalty_value(spec, al)
        tail_exact &= bool(np.all(penalty_value(spec, tail) == cap) and np.all(penalty_derivative(spec, tail) == 0))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and tail_exact and elapsed < 1.0
    verdict("1 penalty calculus", ok,
            f"max rel err {worst:.2e} on 1000 points, flat tail exact={tail_exact}, {elapsed:.2f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. NMI golden value
# --------------------------------------------------------------------------

def test_nmi_golden_value(verdict):
    single, blocks = Partition.singletons(60), Partition.blocks([15] * 4)
    v = nmi(single, blocks)
    per_call = min(timeit.repeat(lambda: nmi(single, blocks), number=20, repeat=5)) / 20
    ok = abs(v - 0.5059) <= 1e-4 and per_call < 1e-3
    verdict("2 NMI golden value", ok, f"nmi = {v:.6f} (target 0.5059), {per_call * 1e3:.3f} ms")
    assert ok


# --------------------------------------------------------------------------
# 3 and 4. strong oracle property and one-step LLA
# --------------------------------------------------------------------------

A_SCAD = 3.7


def _oracle_instance(seed):
    """Orthogonal n=200, p=20 design, four groups of 5, gaps >= 2(a+1) lambda."""
    n, p = 200, 20
    P = Partition.blocks([5] * 4)
    g = np.random.default_rng([7, seed])
    X = orthogonal_design(n, p, g)
    rep = regularity_constants(X, P)
    lam1 = 3 * lambda_bounds(rep, n, p, 4, P.sizes, ACARDS_BETWEEN)
    lam2 = 3 * lambda_bounds(rep, n, p, 4, P.sizes, ACARDS_WITHIN)
    gap = 2 * (A_SCAD + 1) * lam1 * 1.05
    beta0 = GroupedCoefficients(gap * np.arange(4.0), P.sizes).expand(P, p)
    y = X @ beta0 + g.standard_normal(n)
    return X, y, P, beta0, lam1, lam2, g


def test_strong_oracle_property(verdict):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        X, y, P, _, lam1, lam2, _ = _oracle_instance(seed)
        bt = fit_ols(X, y)
        fit = fit_acards(X, y, bt, default_delta(bt), PenaltySpec("scad", lam1, A_SCAD),
                         PenaltySpec("scad", lam2, A_SCAD))
        hits += np.max(np.abs(fit.coefficients - oracle_fit(X, y, P).coefficients)) <= 1e-6
    elapsed = time.perf_counter() - t0
    ok = hits >= 95 and elapsed < 60
    verdict("3 strong oracle property", ok, f"aCARDS == oracle in {hits}/100 runs, {elapsed:.1f}s")
    assert ok


def test_one_step_lla(verdict):
    hits = 0
    for seed in range(100):
        X, y, P, beta0, lam1, lam2, g = _oracle_instance(seed)
        bt = fit_ols(X, y)
        seg = build_segments(bt, rank_map(bt), default_delta(bt))
        graph = build_pair_graph(seg, lam1, lam2)
        init = beta0 + g.uniform(-lam1 / 4, lam1 / 4, beta0.size)
        res = lla_solve(X, y, graph, PenaltySpec("scad", lam1, A_SCAD), PenaltySpec("scad", lam2, A_SCAD),
                        initial=init, config=SolverConfig(min_lla=2, record_path=True))
        hits += np.max(np.abs(res.path[2] - res.path[1])) <= 1e-8
    ok = hits >= 95
    verdict("4 one-step LLA", ok, f"iteration 2 == iteration 1 in {hits}/100 runs")
    assert ok


# --------------------------------------------------------------------------
# 5. rate scaling
# --------------------------------------------------------------------------

def _oracle_error_median(n, sizes, reps=200):
    P = Partition.blocks(sizes)
    p = sum(sizes)
    beta0 = GroupedCoefficients(np.array([-2.0, -1.0, 1.0, 2.0]), P.sizes).expand(P, p)
    errs = []
    for r in range(reps):
        g = np.random.default_rng([5, n, sizes[0], r])
        X = orthogonal_design(n, p, g)
        y = X @ beta0 + g.standard_normal(n)
        errs.append(np.linalg.norm(oracle_fit(X, y, P).coefficients - beta0))
    return float(np.median(errs))


def test_rate_scaling(verdict):
    m100 = _oracle_error_median(100, [5] * 4)
    m400 = _oracle_error_median(400, [5] * 4)
    dominant = _oracle_error_median(100, [17, 1, 1, 1])
    ratio, size_ratio = m400 / m100, dominant / m100
    ok = 0.35 <= ratio <= 0.65 and abs(size_ratio - 1) <= 0.25
    verdict("5 rate scaling", ok,
            f"median(n=400)/median(n=100) = {ratio:.3f}, dominant/equal groups = {size_ratio:.3f}")
    assert ok


# --------------------------------------------------------------------------
# 6 to 8. experiments
# --------------------------------------------------------------------------

def _fit_seconds(report):
    return sum(r.seconds for r in report.rows)


def test_experiment1_reproduction(verdict, exp1_report):
    med = exp1_report.median
    checks = {
        "oracle PE in [1.00, 1.08]": 1.00 <= med("oracle", "pe") <= 1.08,
        "bCARDS PE in [1.00, 1.20]": 1.00 <= med("bcards", "pe") <= 1.20,
        "OLS PE in [1.45, 1.80]": 1.45 <= med("ols", "pe") <= 1.80,
        "aCARDS NMI >= 0.90": med("acards", "nmi") >= 0.90,
        "OLS NMI = 0.5059": abs(med("ols", "nmi") - 0.5059) <= 1e-4,
        "runtime < 30 min": _fit_seconds(exp1_report) < 1800,
    }
    ok = all(checks.values())
    detail = (f"PE oracle {med('oracle', 'pe'):.4f}, bCARDS {med('bcards', 'pe'):.4f}, OLS {med('ols', 'pe'):.4f}; "
              f"NMI aCARDS {med('acards', 'nmi'):.4f}, OLS {med('ols', 'nmi'):.4f}; "
              f"{_fit_seconds(exp1_report):.0f}s; failed: {[k for k, v in checks.items() if not v]}")
    verdict("6 Experiment 1 reproduction", ok, detail)
    assert ok, detail


def test_experiment2_reproduction(verdict, exp2_report):
    fp = exp2_report.median("scards", "fp")
    score = exp2_report.median("scards", "nmi")
    oracle_fp = exp2_report.values("oracle", "fp")
    checks = {
        "sCARDS FP <= 5": fp <= 5,
        "sCARDS NMI >= 0.9": score >= 0.9,
        "oracle FP == 0": oracle_fp.size == 100 and bool(np.all(oracle_fp == 0)),
    }
    ok = all(checks.values())
    detail = (f"sCARDS median FP {fp:g}, NMI on important variables {score:.4f}, "
              f"oracle FP max {np.max(oracle_fp):g}; failed: {[k for k, v in checks.items() if not v]}")
    verdict("7 Experiment 2 reproduction", ok, detail)
    assert ok, detail


def test_experiment3_reproduction(verdict):
    rep = run_replications(SimConfig("exp3", T=80, reps=20, master_seed=0, methods=("oracle", "ols", "acards"),
                                     workers=1))
    score, pe, ols_pe = rep.median("acards", "nmi"), rep.median("acards", "pe"), rep.median("ols", "pe")
    ok = score >= 0.9 and pe <= ols_pe and not rep.failures
    verdict("8 Experiment 3 reproduction", ok,
            f"panel CARDS median NMI {score:.4f}, PE {pe:.4f} vs OLS {ols_pe:.4f}, oracle PE "
            f"{rep.median('oracle', 'pe'):.4f}")
    assert ok


# --------------------------------------------------------------------------
# 9. L1 fused penalty and irrepresentability
# --------------------------------------------------------------------------

def _l1_instance(values, seed):
    n, p, m = 400, 20, 5
    P = Partition.blocks([m] * 4)
    vals = GroupedCoefficients(np.asarray(values, dtype=float), P.sizes)
    g = np.random.default_rng([9, seed])
    X = orthogonal_design(n, p, g)
    y = X @ vals.expand(P, p) + g.standard_normal(n)
    return X, y, P, vals


def _l1_recovers(X, y, P, lams):
    tau = np.arange(X.shape[1])
    graph = build_pair_graph(singleton_segmentation(tau), 1.0, 1.0)
    truth = P.canonical()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for lam in lams:
            spec = PenaltySpec("l1", float(lam))
            if lla_solve(X, y, graph, spec, spec).partition.canonical() == truth:
                return True
    return False


def test_l1_irrepresentability(verdict):
    tau = np.arange(20)
    alt_hits, alt_margin_ok = 0, True
    for seed in range(100):
        X, y, P, vals = _l1_instance([0, 10, 5, 15], seed)
        ir = irrepresentability_check(X, P, tau, vals)
        alt_margin_ok &= ir.margin > 0
        lo, hi = l1_lambda_window(regularity_constants(X, P, vals), X.shape[0], X.shape[1], P.sizes, ir.margin)
        alt_hits += lo < hi and _l1_recovers(X, y, P, np.geomspace(lo, hi, 30))
    pos_hits, pos_violated = 0, True
    for seed in range(100):
        X, y, P, vals = _l1_instance([0, 5, 10, 15], seed)
        pos_violated &= not irrepresentability_check(X, P, tau, vals).satisfied
        z = X.T @ y / X.shape[0]
        pos_hits += _l1_recovers(X, y, P, np.geomspace(0.01, 1.0, 30) * (z.max() - z.min()))
    ok = alt_margin_ok and alt_hits >= 90 and pos_hits <= 10
    verdict("9 L1 irrepresentability", ok,
            f"alternating signs recovered {alt_hits}/100 (margin > 0: {alt_margin_ok}), "
            f"all-positive recovered {pos_hits}/100 (condition violated: {pos_violated})")
    assert ok


# --------------------------------------------------------------------------
# 10. variance comparison
# --------------------------------------------------------------------------

def test_grouped_variance_not_larger(verdict):
    g = np.random.default_rng(10)
    worst = -np.inf
    for _ in range(1000):
        p = int(g.integers(2, 16))
        n = p + int(g.integers(1, 40))
        X = g.standard_normal((n, p)) * g.uniform(0.2, 3.0, p)
        labels = g.integers(0, int(g.integers(1, p + 1)), p)
        groups = [tuple(np.flatnonzero(labels == k)) for k in np.unique(labels)]
        a = g.standard_normal(p)
        v1, v2 = variance_pair(X, Partition(tuple(groups)), a)
        worst = max(worst, v2 - v1)
    ok = worst <= 1e-12
    verdict("10 variance comparison", ok, f"max(v2 - v1) over 1000 triples = {worst:.3e}")
    assert ok


# --------------------------------------------------------------------------
# 11. determinism across thread counts
# --------------------------------------------------------------------------

def _cli(args, threads, cwd):
    env = dict(os.environ, CARDS_THREADS=str(threads))
    proc = subprocess.run([sys.executable, "-m", "cards.cli", *args], capture_output=True, text=True,
                          env=env, cwd=cwd)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_determinism_across_threads(verdict, tmp_path):
    g = np.random.default_rng(11)
    X = g.standard_normal((80, 12))
    y = X @ np.repeat([-1.0, 0.0, 1.0], 4) + 0.5 * g.standard_normal(80)
    data = tmp_path / "data.csv"
    data.write_text("y," + ",".join(f"x{j}" for j in range(12)) + "\n"
                    + "".join(",".join(repr(float(v)) for v in [yi, *row]) + "\n" for yi, row in zip(y, X)))
    runs = {
        "simulate exp1": ["simulate", "--experiment", "1", "--reps", "3", "--seed", "5", "--test-size", "1000",
                          "--methods", "oracle,ols,bcards,acards"],
        "simulate exp2": ["simulate", "--experiment", "2", "--reps", "2", "--seed", "5", "--test-size", "1000",
                          "--methods", "oracle,scad,scards"],
        "simulate exp3": ["simulate", "--experiment", "3", "--T", "20", "--reps", "3", "--seed", "5",
                          "--test-size", "500", "--methods", "oracle,ols"],
        "fit --tune acards": ["fit", "--data", str(data), "--method", "acards", "--tune", "bic"],
        "fit --tune scards": ["fit", "--data", str(data), "--method", "scards", "--tune", "gcv"],
    }
    differ = []
    for name, args in runs.items():
        outputs = []
        for threads in (1, 8):
            extra = ["--csv", f"{threads}.csv"] if args[0] == "simulate" else []
            text = _cli(args + extra, threads, tmp_path)
            if extra:
                text += (tmp_path / f"{threads}.csv").read_text()
            outputs.append(text)
        json.loads(outputs[0].split("\nrep,")[0])  # the summary is valid JSON
        if outputs[0] != outputs[1]:
            differ.append(name)
    ok = not differ
    verdict("11 determinism across thread counts", ok,
            f"{len(runs)} invocations compared byte for byte; differing: {differ or 'none'}")
    assert ok
