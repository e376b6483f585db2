"""Dataset ingestion and report emission (JSON, CSV, SVG boxplots).

Floats are written with ``repr`` (shortest round-trip form) so a report
re-parses to the same doubles.  Indices in every report are 1-based.
Files are written once via a temporary file and an atomic rename.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from xml.sax.saxutils import escape

import numpy as np

from .core import FitResult, Partition
from .errors import DataError, MissingResponseError, NonNumericError, ParseError

SCHEMA = "cards-report/1"
SIM_COLUMNS = ("rep", "method", "pe", "nmi", "fp")


# --------------------------------------------------------------------------
# input
# --------------------------------------------------------------------------

def parse_dataset_csv(path, response: str | None = None):
    """Read a CSV with a header row into (X, y, predictor names).

    The response is the column named ``response`` (default: the first
    column); every other column is a predictor.  Line and column numbers
    in errors are 1-based and count the header as line 1.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return parse_dataset_text(text, response)


def parse_dataset_text(text: str, response: str | None = None):
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(1, 1, "empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError(1, 1, "duplicate column names")
    if response is None:
        ridx = 0
    elif response in header:
        ridx = header.index(response)
    else:
        raise MissingResponseError(f"response column {response!r} not in header")
    if len(header) < 2:
        raise ParseError(1, len(header), "need a response and at least one predictor")
    if len(rows) < 2:
        raise ParseError(2, 1, "no data rows")
    data = np.empty((len(rows) - 1, len(header)))
    for li, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(li, min(len(row), len(header)) + 1,
                             f"expected {len(header)} fields, found {len(row)}")
        for ci, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericError(cell, li, ci + 1) from None
            if not math.isfinite(v):
                raise NonNumericError(cell, li, ci + 1)
            data[li - 2, ci] = v
    y = data[:, ridx]
    keep = [c for c in range(len(header)) if c != ridx]
    return data[:, keep], y, [header[c] for c in keep]


def read_partition(path) -> Partition:
    """Partition file: JSON array of 1-based index arrays (or a report-style dict)."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.colno, exc.msg) from None
    if not isinstance(obj, (list, dict)):
        raise DataError("partition file must hold a JSON array of index arrays")
    try:
        return Partition.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad partition file: {exc}") from None


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _num(v):
    """JSON-safe float: NaN -> None, infinities -> strings."""
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (float, int, np.floating, np.integer, np.bool_, bool)) or obj is None:
        return _num(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _csv_float(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


# --------------------------------------------------------------------------
# fit reports
# --------------------------------------------------------------------------

def fit_report(fit: FitResult, names=None, extra: dict | None = None) -> dict:
    p = fit.coefficients.size
    settings = {k: v for k, v in fit.settings.items() if k not in ("score_table", "coefficients_fitted_scale")}
    inner = fit.inner_stats or []
    diag = {
        "lla_iterations": fit.iterations,
        "converged": fit.converged,
        "objective_trace": fit.objective_trace,
        "admm_iterations": [s.get("admm_iterations") for s in inner],
        "max_kkt_residual": max((s.get("kkt", 0.0) for s in inner), default=0.0),
    }
    rep = {
        "schema": SCHEMA,
        "method": fit.method,
        "p": p,
        "names": list(names) if names is not None else None,
        "coefficients": fit.coefficients,
        "intercept": fit.intercept,
        "groups": [[i + 1 for i in g] for g in fit.partition.groups],
        "zero_group": [i + 1 for i in fit.partition.zero_group],
        "K": fit.partition.K,
        "objective": fit.objective,
        "settings": settings,
        "diagnostics": diag,
    }
    if "score_table" in fit.settings:
        rep["score_table"] = fit.settings["score_table"]
    if extra:
        rep.update(extra)
    return rep


def load_fit_report(text: str) -> dict:
    obj = json.loads(text)
    if obj.get("schema") != SCHEMA:
        raise DataError(f"unsupported report schema {obj.get('schema')!r}")
    obj["coefficients"] = np.array(obj["coefficients"], dtype=float)
    return obj


# --------------------------------------------------------------------------
# simulation reports
# --------------------------------------------------------------------------

def sim_csv(report) -> str:
    """One row per replication and method; reps are 1-based."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIM_COLUMNS)
    for r in report.rows:
        w.writerow([r.rep + 1, r.method, _csv_float(r.pe), _csv_float(r.nmi), _csv_float(r.fp)])
    return buf.getvalue()


def sim_summary(report, timing: bool = False) -> dict:
    cfg = report.config
    out = {
        "schema": SCHEMA,
        "experiment": cfg.experiment,
        "r": cfg.r if cfg.experiment != "exp3" else None,
        "T": cfg.T if cfg.experiment == "exp3" else None,
        "reps": cfg.reps,
        "seed": cfg.master_seed,
        "test_size": cfg.test_size,
        "methods": list(cfg.methods),
        "medians": report.medians,
        "failures": [{"rep": r + 1, "method": m, "error": e} for r, m, e in report.failures],
    }
    if timing:
        out["median_seconds"] = report.runtime
    return out


def svg_boxplot(groups: dict, title: str = "", width: int = 640, height: int = 360) -> str:
    """Minimal SVG boxplot: one box (quartiles, median, 1.5 IQR whiskers) per key."""
    names = list(groups)
    data = [np.asarray([v for v in groups[k] if not math.isnan(v)], dtype=float) for k in names]
    finite = np.concatenate([d for d in data if d.size]) if any(d.size for d in data) else np.zeros(1)
    lo, hi = float(finite.min()), float(finite.max())
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom

    def ypix(v):
        return top + ph * (hi - v) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for t in np.linspace(lo, hi, 5):
        y = ypix(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    slot = pw / max(len(names), 1)
    for i, (name, d) in enumerate(zip(names, data)):
        cx = left + slot * (i + 0.5)
        bw = slot * 0.5
        out.append(f'<text x="{cx:.1f}" y="{top + ph + 16}" text-anchor="middle">{escape(str(name))}</text>')
        if not d.size:
            continue
        q1, med, q3 = np.percentile(d, [25, 50, 75])
        iqr = q3 - q1
        wlo = float(d[d >= q1 - 1.5 * iqr].min())
        whi = float(d[d <= q3 + 1.5 * iqr].max())
        out.append(f'<line x1="{cx:.1f}" y1="{ypix(whi):.1f}" x2="{cx:.1f}" y2="{ypix(wlo):.1f}" stroke="black"/>')
        out.append(f'<rect x="{cx - bw / 2:.1f}" y="{ypix(q3):.1f}" width="{bw:.1f}" '
                   f'height="{max(ypix(q1) - ypix(q3), 0.5):.1f}" fill="#cfe0f3" stroke="black"/>')
        out.append(f'<line x1="{cx - bw / 2:.1f}" y1="{ypix(med):.1f}" x2="{cx + bw / 2:.1f}" '
                   f'y2="{ypix(med):.1f}" stroke="black" stroke-width="2"/>')
        for v in d[(d < wlo) | (d > whi)]:
            out.append(f'<circle cx="{cx:.1f}" cy="{ypix(v):.1f}" r="2" fill="none" stroke="black"/>')
    out.append("</svg>\n")
    return "\n".join(out)


def sim_svg(report, metric: str = "pe") -> str:
    groups = {m: report.values(m, metric).tolist() for m in report.methods}
    return svg_boxplot(groups, title=f"{report.config.experiment}: {metric}")


def emit_report(result, path, fmt: str = "json", **kw) -> None:
    """Write a FitResult (json) or SimReport (json, csv, svg-box) to ``path``."""
    if isinstance(result, FitResult):
        if fmt != "json":
            raise ValueError("fit results are emitted as json")
        text = dumps(fit_report(result, kw.get("names"), kw.get("extra")))
    elif fmt == "json":
        text = dumps(sim_summary(result, kw.get("timing", False)))
    elif fmt == "csv":
        text = sim_csv(result)
    elif fmt == "svg-box":
        text = sim_svg(result, kw.get("metric", "pe"))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    write_atomic(path, text)
