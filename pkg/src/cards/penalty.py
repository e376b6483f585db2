"""Folded-concave (SCAD, MCP) and L1 penalties.

All functions are vectorised over ``t``.  ``penalty_derivative`` takes
``t >= 0`` and returns the right limit ``p'(0+) = lambda`` at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, LambdaZeroError

SCAD, MCP, L1 = "scad", "mcp", "l1"
_DEFAULT_A = {SCAD: 3.7, MCP: 3.0, L1: None}


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    lam: float
    a: float | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in _DEFAULT_A:
            raise InvalidSpecError(f"unknown penalty kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        a = _DEFAULT_A[kind] if self.a is None else float(self.a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "lam", float(self.lam))
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidSpecError(f"lambda must be finite and >= 0, got {self.lam}")
        if kind == SCAD and not a > 2:
            raise InvalidSpecError(f"SCAD needs a > 2, got {a}")
        if kind == MCP and not a > 1:
            raise InvalidSpecError(f"MCP needs a > 1, got {a}")

    @property
    def flat_tail(self) -> bool:
        return self.kind != L1

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, lam, self.a)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "a": self.a}


def scad(lam, a=3.7):
    return PenaltySpec(SCAD, lam, a)


def mcp(lam, a=3.0):
    return PenaltySpec(MCP, lam, a)


def l1(lam):
    return PenaltySpec(L1, lam)


def penalty_value(spec: PenaltySpec, t):
    """p_lambda(|t|)."""
    t = np.abs(np.asarray(t, dtype=float))
    lam, a = spec.lam, spec.a
    if spec.kind == L1 or lam == 0:
        return lam * t
    if spec.kind == SCAD:
        mid = (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
        out = np.where(t <= lam, lam * t, np.where(t < a * lam, mid, (a + 1) * lam**2 / 2))
    else:
        out = np.where(t < a * lam, lam * t - t**2 / (2 * a), a * lam**2 / 2)
    return out if out.ndim else float(out)


def penalty_derivative(spec: PenaltySpec, t):
    """p'_lambda(t) for t >= 0 (negative input is folded with abs)."""
    t = np.abs(np.asarray(t, dtype=float))
    lam, a = spec.lam, spec.a
    if spec.kind == L1 or lam == 0:
        out = np.full(t.shape, lam)
    elif spec.kind == SCAD:
        out = np.where(t <= lam, lam, np.where(t >= a * lam, 0.0, (a * lam - t) / (a - 1)))
    else:
        out = np.where(t >= a * lam, 0.0, lam - t / a)
    return out if out.ndim else float(out)


def rho_derivative(spec: PenaltySpec, t):
    """Rescaled derivative p'_lambda(t) / lambda, equal to 1 at 0+."""
    if spec.lam == 0:
        raise LambdaZeroError("rho' is undefined for lambda = 0")
    return penalty_derivative(spec, t) / spec.lam
