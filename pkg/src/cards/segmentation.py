"""Rank map, delta-gap segmentation and the hybrid-penalty pair graph."""
from __future__ import annotations

import numpy as np

from .core import BETWEEN, WITHIN, PairGraph, Segmentation, as_coefficients
from .errors import AllZeroError


def rank_map(beta_tilde) -> np.ndarray:
    """Permutation sorting ``beta_tilde`` ascending; ties keep index order."""
    return np.argsort(as_coefficients(beta_tilde), kind="stable")


def sorted_gaps(beta_tilde) -> np.ndarray:
    b = np.sort(as_coefficients(beta_tilde))
    return np.diff(b)


def default_delta(beta_tilde) -> float:
    """Median of consecutive gaps of the sorted preliminary estimate."""
    gaps = sorted_gaps(beta_tilde)
    return float(np.median(gaps)) if gaps.size else 0.0


def build_segments(beta_tilde, tau, delta: float) -> Segmentation:
    """Cut the ranking wherever the sorted gap exceeds ``delta`` (strictly)."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    b = as_coefficients(beta_tilde)
    tau = np.asarray(tau, dtype=np.intp)
    vals = b[tau]
    cuts = np.flatnonzero(np.diff(vals) > delta) + 1
    segments = tuple(tuple(int(i) for i in seg) for seg in np.split(tau, cuts))
    return Segmentation(segments, (), float(delta))


def build_segments_sparse(beta_tilde, delta: float) -> Segmentation:
    """Segment only the nonzero coordinates; exact zeros form the zero set."""
    b = as_coefficients(beta_tilde)
    nz = np.flatnonzero(b != 0)
    if nz.size == 0:
        raise AllZeroError("preliminary estimate is identically zero")
    seg = build_segments(b[nz], rank_map(b[nz]), delta)
    segments = tuple(tuple(int(nz[i]) for i in s) for s in seg.segments)
    zero = tuple(int(i) for i in np.flatnonzero(b == 0))
    return Segmentation(segments, zero, float(delta))


def singleton_segmentation(tau) -> Segmentation:
    return Segmentation(tuple((int(i),) for i in tau), (), 0.0)


def build_pair_graph(seg: Segmentation, lambda1: float, lambda2: float) -> PairGraph:
    """All pairs across adjacent segments (between) and inside segments (within)."""
    I, J, T = [], [], []
    segs = [np.asarray(s, dtype=np.intp) for s in seg.segments]
    for a, b in zip(segs[:-1], segs[1:]):
        ii, jj = np.meshgrid(a, b, indexing="ij")
        I.append(ii.ravel())
        J.append(jj.ravel())
        T.append(np.full(ii.size, BETWEEN))
    for s in segs:
        if s.size > 1:
            r, c = np.triu_indices(s.size, 1)
            I.append(s[r])
            J.append(s[c])
            T.append(np.full(r.size, WITHIN))
    if I:
        I, J, T = np.concatenate(I), np.concatenate(J), np.concatenate(T)
    else:
        I = J = np.zeros(0, dtype=np.intp)
        T = np.zeros(0, dtype=np.int8)
    return PairGraph(I, J, T, float(lambda1), float(lambda2))


def order_preserving(seg: Segmentation, beta_true) -> bool:
    """True iff max over B_l <= min over B_{l+1} for all l (and beta vanishes on B_0)."""
    b = as_coefficients(beta_true)
    if seg.zero_set and np.any(b[list(seg.zero_set)] != 0):
        return False
    for lo, hi in zip(seg.segments[:-1], seg.segments[1:]):
        if b[list(lo)].max() > b[list(hi)].min():
            return False
    return True


def jump_count(tau, beta_true) -> int:
    """Number of changes of the true value along the ordering."""
    b = as_coefficients(beta_true)[np.asarray(tau, dtype=np.intp)]
    return int(np.count_nonzero(b[1:] != b[:-1]))
