"""High-level fitting entry point with preprocessing.

The solver functions fit the design exactly as given.  :func:`fit` is the
user-facing wrapper: by default it centres y and the columns of X (the
intercept is reported separately) and rescales every column to norm
sqrt(n), then maps the coefficients back to original units.  The
extracted partition refers to the scale the penalty acted on.
"""
from __future__ import annotations

import numpy as np

from .core import DesignMatrix, FitResult, as_matrix, as_response, center_columns, standardize
from .penalty import PenaltySpec
from .preliminary import fit_ols
from .solver import SolverConfig
from .tuning import METHODS, fit_point, grid_search, select_scad_preliminary


def preprocess(X, y, standardize_columns: bool = True, center: bool = True):
    """Return (DesignMatrix, centred response, y mean)."""
    Xv = as_matrix(X)
    y = as_response(y, Xv.shape[0])
    if isinstance(X, DesignMatrix) and (X.standardized or X.centered):
        D = X
    elif standardize_columns:
        D = standardize(Xv, center=center)
    elif center:
        D = center_columns(Xv)
    else:
        D = DesignMatrix(Xv)
    y_mean = float(y.mean()) if center else 0.0
    return D, y - y_mean, y_mean


def preliminary_estimate(X, y, kind: str = "ols"):
    """(beta_tilde, info) from OLS or BIC-tuned SCAD."""
    if kind == "ols":
        return fit_ols(X, y), {"preliminary": "ols"}
    if kind == "scad":
        beta, lam, _ = select_scad_preliminary(X, y)
        return beta, {"preliminary": "scad", "lambda_prime": lam}
    raise ValueError(f"unknown preliminary estimator {kind!r}")


def fit(X, y, method: str = "acards", penalty: str = "scad", a: float | None = None,
        lam: float | None = None, lam2: float | None = None, delta: float | None = None,
        lam_sparse: float | None = None, tune: str | None = None, grids: dict | None = None,
        preliminary: str | None = None, standardize_columns: bool = True, center: bool = True,
        config: SolverConfig | None = None, workers: int | None = None) -> FitResult:
    """Fit one CARDS variant (or a baseline) with optional BIC/GCV tuning.

    Either give the penalty levels explicitly (``lam`` and, depending on
    the method, ``lam2``, ``delta``, ``lam_sparse``) or set ``tune`` to
    "bic" or "gcv".  The preliminary estimate defaults to OLS, or to the
    BIC-tuned SCAD estimate for scards.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    D, yc, y_mean = preprocess(X, y, standardize_columns, center)
    Xs = D.values
    prelim = preliminary or ("scad" if method == "scards" else "ols")
    if method == "tv" and preliminary is None:
        bt, info = None, {"preliminary": None}
    else:
        bt, info = preliminary_estimate(Xs, yc, prelim)

    if tune is not None:
        g = dict(grids or {})
        if method == "scards" and "lambda_sparse" not in g and "lambda_prime" in info:
            g["lambda_sparse"] = [info["lambda_prime"]]
        res, table = grid_search(method, Xs, yc, bt, g, tune, config, penalty, a, workers)
        res.settings["score_table"] = table
    else:
        if lam is None:
            raise ValueError("give lam or set tune")
        point = {"lambda": float(lam)}
        if method in ("acards", "scards"):
            if delta is None or lam2 is None:
                raise ValueError(f"{method} needs delta and lam2")
            point.update(delta=float(delta), lambda2=float(lam2))
        if method == "scards":
            point["lambda_sparse"] = float(lam if lam_sparse is None else lam_sparse)
        PenaltySpec(penalty, lam, a)  # validate early
        res = fit_point(method, Xs, yc, bt, point, penalty, a, config)

    res.settings.update(info)
    res.settings.update(standardized=bool(D.standardized), centered=bool(center))
    stored = res.coefficients
    res.settings["coefficients_fitted_scale"] = stored.tolist()
    res.coefficients = D.to_original(stored)
    res.intercept = D.intercept(res.coefficients, y_mean) if center else 0.0
    return res
