"""Run reports: CSV/JSON persistence, run comparison and timing breakdowns."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KERNELS = ("gradient", "fluxes", "jacobianAssembly", "linearConvert", "linearSetupOrReplace",
           "linearSolve", "linearRetrieve", "update", "turbulencePlaceholder")
LINEAR_STAGES = ("convert", "setup", "solve", "retrieve")
_LINEAR_KERNEL = {"convert": "linearConvert", "setup": "linearSetupOrReplace",
                  "replace": "linearSetupOrReplace", "solve": "linearSolve",
                  "retrieve": "linearRetrieve"}


def kernel_timings(discretization: dict, linear: dict, update=None) -> dict:
    """Map raw timer sections onto the fixed kernel list."""
    out = dict.fromkeys(KERNELS, 0.0)
    for k in ("gradient", "fluxes", "jacobianAssembly", "update"):
        out[k] += float(discretization.get(k, 0.0))
    if update is not None:
        out["update"] += float(update)
    for stage, v in (linear or {}).items():
        if stage in _LINEAR_KERNEL:
            out[_LINEAR_KERNEL[stage]] += float(v)
    return out


@dataclass
class RunReport:
    """Everything a run produced, in memory.

    ``rows`` holds one dict per completed iteration (residuals, monitors and
    coefficients); ``timings`` one dict per iteration of kernel durations
    plus ``iterationTime``; ``linear`` the per-solve linear solver rows.
    """

    name: str
    solver: str
    residual_columns: list
    coefficient_columns: list
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    linear: list = field(default_factory=list)
    converged: bool = False
    summary: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.rows)

    def column(self, name):
        return np.array([float(r[name]) for r in self.rows])

    def max_residual(self):
        return np.array([max(float(r[c]) for c in self.residual_columns) for r in self.rows])

    def cumulative_time(self):
        return np.cumsum([float(t["iterationTime"]) for t in self.timings])

    # -- persistence -----------------------------------------------------------
    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "residuals.csv", ["iteration"] + self.residual_columns + self._monitors()
                   + self.coefficient_columns, self.rows)
        _write_csv(out / "timings.csv", ["iteration", *KERNELS, "iterationTime"], self.timings)
        if self.linear:
            _write_csv(out / "linear.csv", list(self.linear[0].keys()), self.linear)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def _monitors(self):
        if not self.rows:
            return []
        known = set(self.residual_columns) | set(self.coefficient_columns) | {"iteration"}
        return [k for k in self.rows[0] if k not in known]

    def to_dict(self):
        d = {"name": self.name, "solver": self.solver, "iterations": self.iterations,
             "converged": self.converged, "residualColumns": self.residual_columns,
             "coefficientColumns": self.coefficient_columns}
        if self.rows:
            last = self.rows[-1]
            d["finalResiduals"] = {c: float(last[c]) for c in self.residual_columns}
            d["finalCoefficients"] = {c: float(last[c]) for c in self.coefficient_columns}
        d.update(self.summary)
        return d


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = int(v) if k == "iteration" else float(v)
            except (TypeError, ValueError):
                pass
    return rows


def load_run(run_dir) -> RunReport:
    """Rebuild a ``RunReport`` from a run directory."""
    d = Path(run_dir)
    if not (d / "report.json").exists():
        raise FileNotFoundError(f"{d} has no report.json")
    meta = json.loads((d / "report.json").read_text())
    rep = RunReport(meta["name"], meta["solver"], meta["residualColumns"], meta["coefficientColumns"],
                    _read_csv(d / "residuals.csv"), _read_csv(d / "timings.csv"),
                    _read_csv(d / "linear.csv") if (d / "linear.csv").exists() else [],
                    meta.get("converged", False))
    keep = set(rep.to_dict())
    rep.summary = {k: v for k, v in meta.items() if k not in keep}
    return rep


def _as_report(r):
    return r if isinstance(r, RunReport) else load_run(r)


def coefficient_converged(series, window=400, tol=0.005):
    """True when the mean over the last ``window`` values moved less than ``tol`` (relative)
    against the mean of the window before it."""
    s = np.asarray(series, dtype=float)
    if len(s) < 2 * window:
        return False
    new, old = s[-window:].mean(), s[-2 * window:-window].mean()
    scale = max(abs(old), abs(new))
    return bool(scale == 0 or abs(new - old) <= tol * scale)


def time_to_threshold(report: RunReport, threshold):
    """Wall time (excluding monitoring) until the max residual first drops below ``threshold``."""
    res = report.max_residual()
    hit = np.flatnonzero(res < threshold)
    if hit.size == 0:
        return math.inf, None
    k = int(hit[0])
    # residuals describe the incoming state, so the time spent before iteration k+1 counts
    t = float(report.cumulative_time()[k - 1]) if k > 0 else 0.0
    return t, int(report.rows[k]["iteration"])


def _relative_delta(a, b, scale=None):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.abs(a), np.abs(b)) if scale is None else np.full_like(a, scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(denom > 0, np.abs(a - b) / np.where(denom > 0, denom, 1.0), 0.0)
    return d


def compare_runs(a, b, threshold=1e-5):
    """Per-iteration residual and coefficient deltas over the shared iterations, plus
    time-to-threshold for both runs and their ratio ``a / b``."""
    ra, rb = _as_report(a), _as_report(b)
    ia = {int(r["iteration"]): i for i, r in enumerate(ra.rows)}
    ib = {int(r["iteration"]): i for i, r in enumerate(rb.rows)}
    common = sorted(set(ia) & set(ib))
    if not common:
        raise ValueError("runs share no iterations")
    res_cols = [c for c in ra.residual_columns if c in rb.residual_columns]
    coef_cols = [c for c in ra.coefficient_columns if c in rb.coefficient_columns]
    out = {"iterations": [common[0], common[-1]], "nCompared": len(common),
           "residual": {}, "coefficient": {}}
    for c in res_cols:
        x = np.array([ra.rows[ia[k]][c] for k in common], float)
        y = np.array([rb.rows[ib[k]][c] for k in common], float)
        d = _relative_delta(x, y)
        out["residual"][c] = {"maxRelDelta": float(d.max()), "meanRelDelta": float(d.mean())}
    for c in coef_cols:
        x = np.array([ra.rows[ia[k]][c] for k in common], float)
        y = np.array([rb.rows[ib[k]][c] for k in common], float)
        scale = float(max(np.abs(x).max(), np.abs(y).max()))
        d = _relative_delta(x, y, scale if scale > 0 else None)
        out["coefficient"][c] = {"maxRelDelta": float(d.max()), "meanRelDelta": float(d.mean()),
                                 "maxAbsDelta": float(np.abs(x - y).max())}
    out["maxResidualRelDelta"] = max((v["maxRelDelta"] for v in out["residual"].values()), default=0.0)
    out["maxCoefficientRelDelta"] = max((v["maxRelDelta"] for v in out["coefficient"].values()),
                                        default=0.0)
    ta, ka = time_to_threshold(ra, threshold)
    tb, kb = time_to_threshold(rb, threshold)
    out["threshold"] = threshold
    out["timeToThreshold"] = {"a": ta, "b": tb}
    out["iterationsToThreshold"] = {"a": ka, "b": kb}
    out["timeRatio"] = ta / tb if math.isfinite(ta) and math.isfinite(tb) and tb > 0 else None
    return out


def emit_timing_breakdown(report, window=None):
    """Kernel durations normalized by the mean iteration time.

    ``report`` is a ``RunReport``, a run directory, or a mapping with
    ``timings`` (kernel -> seconds), optional ``iterationTime`` and optional
    ``linearTimings`` (stage -> seconds). Returns ``{"kernels": {...,
    "other"}, "linear": {convert, setup, solve, retrieve}}``; both are
    empty when all durations are zero.
    """
    if isinstance(report, dict):
        kern = {k: float(v) for k, v in report.get("timings", {}).items()}
        total = float(report.get("iterationTime", sum(kern.values())))
        lin = {k: float(v) for k, v in report.get("linearTimings", {}).items()}
    else:
        rep = _as_report(report)
        rows = rep.timings[-window:] if window else rep.timings
        n = max(len(rows), 1)
        kern = {k: sum(float(r.get(k, 0.0)) for r in rows) / n for k in KERNELS}
        total = sum(float(r["iterationTime"]) for r in rows) / n
        lin = {"convert": kern["linearConvert"], "setup": kern["linearSetupOrReplace"],
               "solve": kern["linearSolve"], "retrieve": kern["linearRetrieve"]}
    if total <= 0 or not any(v > 0 for v in kern.values()):
        log.warning("timing breakdown requested but all recorded durations are zero")
        return {"kernels": {}, "linear": {}}
    total = max(total, sum(kern.values()))
    kernels = {k: v / total for k, v in kern.items()}
    kernels["other"] = max(0.0, 1.0 - sum(kernels.values()))
    lin_total = sum(lin.values())
    linear = {s: (lin.get(s, 0.0) / lin_total if lin_total > 0 else 0.0) for s in LINEAR_STAGES}
    return {"kernels": kernels, "linear": linear}


def format_breakdown(table) -> str:
    lines = []
    for title, key in (("kernel", "kernels"), ("linear stage", "linear")):
        if not table.get(key):
            continue
        lines.append(f"{title:<24s} fraction")
        for k, v in table[key].items():
            lines.append(f"{k:<24s} {v:8.4f}")
        lines.append("")
    return "\n".join(lines) if lines else "(no timing data)"
