"""Domain types shared across the package.

Indices are 0-based internally. Anything user facing (CLI output, JSON
reports, partition files) is 1-based and converted at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyGroupError,
    MissingIndexError,
    OverlapError,
    PartitionError,
    ZeroColumnError,
)

_NORM_RTOL = 1e-10
_ZERO_COL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """An n x p predictor matrix plus the preprocessing applied to it.

    ``scale[j]`` is the factor column j was multiplied by and ``means[j]``
    the value subtracted from it beforehand, so the stored column equals
    ``(x_j - means[j]) * scale[j]``.  Coefficients fitted on the stored
    matrix map back to original units via :meth:`to_original`.
    """

    values: np.ndarray
    scale: np.ndarray | None = None
    means: np.ndarray | None = None
    standardized: bool = False

    def __post_init__(self):
        X = np.asarray(self.values, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"design must be 2-D, got shape {X.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("design needs n >= 1 and p >= 1")
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "values", _frozen(X))
        p = X.shape[1]
        scale = np.ones(p) if self.scale is None else self.scale
        means = np.zeros(p) if self.means is None else self.means
        object.__setattr__(self, "scale", _frozen(scale))
        object.__setattr__(self, "means", _frozen(means))
        if self.standardized:
            norms = np.linalg.norm(X, axis=0)
            target = np.sqrt(X.shape[0])
            if np.any(norms < _ZERO_COL * target):
                raise ZeroColumnError(int(np.argmin(norms)))
            if np.any(np.abs(norms - target) > _NORM_RTOL * target):
                raise ValueError("standardized flag set but column norms differ from sqrt(n)")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def centered(self) -> bool:
        return bool(np.any(self.means != 0))

    def to_original(self, beta):
        """Map coefficients fitted on ``values`` back to original column units."""
        return np.asarray(beta, dtype=float) * self.scale

    def to_stored(self, beta):
        """Inverse of :meth:`to_original`."""
        return np.asarray(beta, dtype=float) / self.scale

    def intercept(self, beta_original, y_mean: float) -> float:
        return float(y_mean - self.means @ np.asarray(beta_original, dtype=float))


def as_matrix(X) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        return X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"design must be 2-D, got shape {X.shape}")
    return X


def as_response(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite entries")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"response has length {y.shape[0]}, design has {n} rows")
    return y


def as_coefficients(beta, p: int | None = None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if not np.all(np.isfinite(beta)):
        raise ValueError("coefficient vector contains non-finite entries")
    if p is not None and beta.shape[0] != p:
        raise ValueError(f"expected {p} coefficients, got {beta.shape[0]}")
    return beta


def standardize(X, center: bool = False) -> DesignMatrix:
    """Rescale every column to Euclidean norm sqrt(n).

    Rescaling factors (composed with any already recorded on a
    ``DesignMatrix`` input) are kept so that fitted coefficients can be
    mapped back with :meth:`DesignMatrix.to_original`.  With ``center=True``
    columns are demeaned first.
    """
    if isinstance(X, DesignMatrix):
        base, scale0, means0 = X.values, X.scale, X.means
    else:
        base = as_matrix(X)
        scale0, means0 = np.ones(base.shape[1]), np.zeros(base.shape[1])
    n = base.shape[0]
    means = np.zeros(base.shape[1])
    if center:
        means = base.mean(axis=0)
        base = base - means
    norms = np.linalg.norm(base, axis=0)
    tiny = norms < _ZERO_COL * np.sqrt(n)
    if np.any(tiny):
        raise ZeroColumnError(int(np.flatnonzero(tiny)[0]))
    f = np.sqrt(n) / norms
    # stored = (orig - m0) * s0, then (stored - means) * f
    #        = (orig - (m0 + means / s0)) * s0 * f
    return DesignMatrix(
        base * f,
        scale=scale0 * f,
        means=means0 + means / scale0,
        standardized=True,
    )


def center_columns(X) -> DesignMatrix:
    X = X if isinstance(X, DesignMatrix) else DesignMatrix(as_matrix(X))
    m = X.values.mean(axis=0)
    return DesignMatrix(
        X.values - m, scale=X.scale, means=X.means + m / X.scale, standardized=False
    )


@dataclass(frozen=True)
class Partition:
    """Disjoint index groups A_1..A_K plus an optional zero group A_0."""

    groups: tuple[tuple[int, ...], ...]
    zero_group: tuple[int, ...] = ()

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "zero_group", tuple(int(i) for i in self.zero_group))

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def size(self) -> int:
        return sum(self.sizes) + len(self.zero_group)

    def indices(self) -> list[int]:
        out = [i for g in self.groups for i in g]
        out.extend(self.zero_group)
        return out

    def labels(self, p: int | None = None) -> np.ndarray:
        """Group label per index; the zero group gets label K."""
        p = self.size if p is None else p
        lab = np.full(p, -1, dtype=int)
        for k, g in enumerate(self.groups):
            lab[list(g)] = k
        if self.zero_group:
            lab[list(self.zero_group)] = self.K
        return lab

    def membership(self, p: int) -> np.ndarray:
        """p x K indicator matrix; zero-group rows are all zero."""
        M = np.zeros((p, self.K))
        for k, g in enumerate(self.groups):
            M[list(g), k] = 1.0
        return M

    def canonical(self) -> "Partition":
        groups = sorted(tuple(sorted(g)) for g in self.groups)
        return Partition(tuple(groups), tuple(sorted(self.zero_group)))

    def restrict(self, keep: Iterable[int]) -> "Partition":
        """Partition induced on ``keep``; indices are renumbered 0..len(keep)-1."""
        keep = list(keep)
        pos = {i: r for r, i in enumerate(keep)}
        groups = []
        for g in self.groups:
            sub = tuple(pos[i] for i in g if i in pos)
            if sub:
                groups.append(sub)
        zero = tuple(pos[i] for i in self.zero_group if i in pos)
        return Partition(tuple(groups), zero)

    @classmethod
    def from_labels(cls, labels: Sequence[int], zero_label=None) -> "Partition":
        labels = list(labels)
        order, buckets, zero = [], {}, []
        for i, lab in enumerate(labels):
            if zero_label is not None and lab == zero_label:
                zero.append(i)
                continue
            if lab not in buckets:
                buckets[lab] = []
                order.append(lab)
            buckets[lab].append(i)
        return cls(tuple(tuple(buckets[lab]) for lab in order), tuple(zero))

    @classmethod
    def singletons(cls, p: int) -> "Partition":
        return cls(tuple((j,) for j in range(p)))

    @classmethod
    def blocks(cls, sizes: Sequence[int], zero: int = 0) -> "Partition":
        groups, start = [], 0
        for s in sizes:
            groups.append(tuple(range(start, start + s)))
            start += s
        return cls(tuple(groups), tuple(range(start, start + zero)))

    def to_json(self) -> dict:
        return {
            "groups": [[i + 1 for i in g] for g in self.groups],
            "zero_group": [i + 1 for i in self.zero_group],
        }

    @classmethod
    def from_json(cls, obj) -> "Partition":
        """Accept either a bare list of 1-based index lists or a dict."""
        if isinstance(obj, dict):
            groups = obj.get("groups", [])
            zero = obj.get("zero_group", [])
        else:
            groups, zero = obj, []
        for g in list(groups) + [zero]:
            for i in g:
                if int(i) < 1:
                    raise PartitionError("partition files use 1-based indices")
        return cls(
            tuple(tuple(int(i) - 1 for i in g) for g in groups),
            tuple(int(i) - 1 for i in zero),
        )


def validate_partition(P: Partition, p: int, complete: bool = True) -> None:
    """Raise if ``P`` is not a valid (and, by default, complete) partition of range(p)."""
    seen = np.zeros(p, dtype=bool)
    for k, g in enumerate(P.groups):
        if len(g) == 0:
            raise EmptyGroupError(k)
    for i in P.indices():
        if i < 0 or i >= p:
            raise PartitionError(f"index {i + 1} outside 1..{p}")
        if seen[i]:
            raise OverlapError(i)
        seen[i] = True
    if complete and not seen.all():
        raise MissingIndexError(int(np.flatnonzero(~seen)[0]))


@dataclass(frozen=True)
class GroupedCoefficients:
    """Common values of the groups of a :class:`Partition`, in group order."""

    values: np.ndarray
    sizes: tuple[int, ...]

    def __post_init__(self):
        v = _frozen(np.ravel(self.values))
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if v.size < 1 or v.size != len(self.sizes):
            raise ValueError("need one value per group and K >= 1")
        if any(s < 1 for s in self.sizes):
            raise ValueError("group sizes must be positive")

    @property
    def K(self) -> int:
        return self.values.size

    @property
    def increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0))

    def expand(self, P: Partition, p: int) -> np.ndarray:
        beta = np.zeros(p)
        for k, g in enumerate(P.groups):
            beta[list(g)] = self.values[k]
        return beta

    @classmethod
    def from_beta(cls, beta, P: Partition) -> "GroupedCoefficients":
        beta = np.asarray(beta, dtype=float)
        return cls(np.array([beta[list(g)].mean() for g in P.groups]), P.sizes)


@dataclass(frozen=True)
class Segmentation:
    """Ordered segments B_1..B_L (ascending preliminary value) plus zero set B_0."""

    segments: tuple[tuple[int, ...], ...]
    zero_set: tuple[int, ...] = ()
    delta: float = 0.0

    @property
    def L(self) -> int:
        return len(self.segments)

    def support(self) -> list[int]:
        return [i for s in self.segments for i in s]


BETWEEN, WITHIN = 0, 1


@dataclass(frozen=True, eq=False)
class PairGraph:
    """Penalised pairs (i < j) with tier BETWEEN (adjacent segments) or WITHIN."""

    i: np.ndarray
    j: np.ndarray
    tier: np.ndarray
    lambda_between: float = 0.0
    lambda_within: float = 0.0

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.intp)
        j = np.asarray(self.j, dtype=np.intp)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        object.__setattr__(self, "i", _frozen(lo, np.intp))
        object.__setattr__(self, "j", _frozen(hi, np.intp))
        object.__setattr__(self, "tier", _frozen(self.tier, np.int8))
        if np.any(lo == hi):
            raise ValueError("self pairs are not allowed")
        if self.lambda_between < 0 or self.lambda_within < 0:
            raise ValueError("penalty levels must be nonnegative")

    @property
    def n_between(self) -> int:
        return int(np.sum(self.tier == BETWEEN))

    @property
    def n_within(self) -> int:
        return int(np.sum(self.tier == WITHIN))

    def __len__(self):
        return self.i.size

    @property
    def pairs(self) -> list[tuple[int, int, str]]:
        names = ("between", "within")
        return [(int(a), int(b), names[t]) for a, b, t in zip(self.i, self.j, self.tier)]


@dataclass
class FitResult:
    coefficients: np.ndarray
    partition: Partition
    objective: float
    iterations: int = 0
    converged: bool = True
    inner_stats: list[dict] = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    intercept: float = 0.0
    objective_trace: list[float] = field(default_factory=list)
    path: list[np.ndarray] | None = None
    group_se: np.ndarray | None = None
    method: str = ""

    @property
    def df(self) -> int:
        """Number of distinct nonzero coefficient groups."""
        tol = self.settings.get("extract_tol", 0.0)
        return sum(
            1 for g in self.partition.groups
            if abs(float(np.mean(self.coefficients[list(g)]))) > tol
        )

    def predict(self, X) -> np.ndarray:
        return as_matrix(X) @ self.coefficients + self.intercept
