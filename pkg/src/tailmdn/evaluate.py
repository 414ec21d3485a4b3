"""Tail-probability evaluation: CCDF curves, ensemble bands, error metrics, reports.

Curves live on a latency grid in ms. The default grid puts the truth's
quantiles at 60 log-spaced exceedance levels from 0.5 down to 1e-6, so the
points concentrate in the tail. ``tail_error`` is this package's own
metric (log10 ratio of predicted to true exceedance probability at truth
quantiles); reports say so in ``metric_note``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .datasets import Dataset, SyntheticSpec
from .dist import SplicedMixtureParams, spliced_ccdf, spliced_isf, spliced_quantile
from .errors import ConfigError, FormatError
from .model import ModelWeights, forward

REPORT_FORMAT_VERSION = 1
DEFAULT_LEVELS = (1e-2, 1e-3, 1e-4, 1e-5)
METRIC_NOTE = (
    "tail_error: log10(predicted_ccdf / truth_ccdf) at the truth's quantile for each level, "
    "and predicted minus true quantile in ms; a package-defined metric"
)


@dataclass(frozen=True)
class CcdfCurve:
    grid: np.ndarray
    probs: np.ndarray
    label: str = ""
    condition: tuple = ()
    resolution: float = 0.0  # smallest resolvable level (1/n for empirical curves)

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.float64).reshape(-1)
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if g.size != p.size:
            raise ValueError("grid and probs differ in length")
        if np.any(np.diff(g) < 0):
            raise ValueError("grid must be ascending")
        if np.any((p < 0) | (p > 1)) or np.any(np.diff(p) > 0):
            raise ValueError("probs must lie in [0, 1] and be nonincreasing")
        g.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "condition", tuple(self.condition))


def level_grid(n_levels: int = 60, top: float = 0.5, bottom: float = 1e-6) -> np.ndarray:
    """Exceedance levels, log-spaced and descending."""
    return np.logspace(np.log10(top), np.log10(bottom), n_levels)


def evaluation_levels(levels=DEFAULT_LEVELS, grid_levels=None) -> np.ndarray:
    """Grid levels merged with the metric levels so every metric level is a grid point."""
    base = level_grid() if grid_levels is None else np.asarray(grid_levels, dtype=np.float64)
    return np.union1d(base, np.asarray(levels, dtype=np.float64))[::-1]


def analytic_grid(theta: SplicedMixtureParams, levels=None) -> np.ndarray:
    levels = level_grid() if levels is None else np.asarray(levels, dtype=np.float64)
    return np.unique(spliced_isf(levels, theta))


def empirical_grid(samples, levels=None) -> np.ndarray:
    """Sample quantiles at the levels an n-sample set can resolve (>= 1/n)."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empirical grid needs samples")
    levels = level_grid() if levels is None else np.asarray(levels, dtype=np.float64)
    levels = levels[levels >= 1.0 / s.size]
    return np.unique(np.quantile(s, 1.0 - levels))


def empirical_ccdf(samples, grid, label: str = "empirical", condition=()) -> CcdfCurve:
    """Exact fraction of samples strictly above each grid point."""
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    if s.size == 0:
        raise ValueError("empirical_ccdf needs at least one sample")
    grid = np.asarray(grid, dtype=np.float64)
    above = s.size - np.searchsorted(s, grid, side="right")
    return CcdfCurve(grid, above / s.size, label, condition, resolution=1.0 / s.size)


def analytic_ccdf(theta: SplicedMixtureParams, grid, label: str = "analytic", condition=()) -> CcdfCurve:
    return CcdfCurve(grid, spliced_ccdf(np.asarray(grid, dtype=np.float64), theta), label, condition)


def _condition_vector(model: ModelWeights, condition) -> np.ndarray:
    names = model.normalization.condition_names
    if isinstance(condition, Mapping):
        if set(condition) != set(names):
            raise ConfigError(f"condition names {sorted(condition)} do not match model schema {list(names)}")
        values = [float(condition[n]) for n in names]
    else:
        values = [float(v) for v in np.asarray(condition, dtype=np.float64).reshape(-1)]
        if len(values) != len(names):
            raise ConfigError(f"model expects {len(names)} condition values {list(names)}, got {len(values)}")
    return np.array(values)


def predicted_theta(model: ModelWeights, condition) -> SplicedMixtureParams:
    """Mixture parameters (normalized latency units) for a raw-unit condition."""
    x = _condition_vector(model, condition)
    return forward(model.normalization.normalize_conditions(x), model)


def predict_ccdf(model: ModelWeights, condition, grid, label: str = "model") -> CcdfCurve:
    """P[Y > y | x] over a grid of latencies in ms."""
    x = _condition_vector(model, condition)
    theta = forward(model.normalization.normalize_conditions(x), model)
    y = model.normalization.normalize_latency(grid)
    return CcdfCurve(grid, spliced_ccdf(np.asarray(y), theta), label, tuple(x.tolist()))


def predict_quantile(model: ModelWeights, condition, reliability) -> float:
    """Latency in ms not exceeded with probability ``reliability``."""
    theta = predicted_theta(model, condition)
    return float(model.normalization.denormalize_latency(spliced_quantile(float(reliability), theta)))


def ensemble_bands(curves: Sequence[CcdfCurve]) -> tuple:
    """Pointwise (min, avg, max) of curves sharing one grid."""
    if not curves:
        raise ValueError("need at least one curve")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid.shape != grid.shape or np.any(c.grid != grid):
            raise ValueError("curves do not share a grid")
    stack = np.vstack([c.probs for c in curves])
    cond = curves[0].condition
    lo = CcdfCurve(grid, stack.min(axis=0), "min", cond)
    hi = CcdfCurve(grid, stack.max(axis=0), "max", cond)
    avg = np.clip(stack.mean(axis=0), lo.probs, hi.probs)
    return lo, CcdfCurve(grid, avg, "avg", cond), hi


def _crossing(curve: CcdfCurve, level: float) -> Optional[float]:
    """Latency where the curve falls to ``level``, interpolated in log-probability."""
    p = curve.probs
    idx = np.flatnonzero(p <= level)
    if idx.size == 0:
        return None
    j = int(idx[0])
    if p[j] == level or j == 0:
        return float(curve.grid[j]) if p[j] == level else None
    p0, p1 = p[j - 1], p[j]
    if p1 <= 0:
        return float(curve.grid[j])
    f = (np.log(p0) - np.log(level)) / (np.log(p0) - np.log(p1))
    return float(curve.grid[j - 1] + f * (curve.grid[j] - curve.grid[j - 1]))


def tail_error(predicted: CcdfCurve, truth: CcdfCurve, levels=DEFAULT_LEVELS) -> list:
    """Per level: log10 error at the truth quantile and horizontal error in ms.

    Levels the truth curve cannot resolve (below its resolution, or past the
    end of its grid) are reported with ``available=False``.
    """
    if predicted.grid.shape != truth.grid.shape or np.any(predicted.grid != truth.grid):
        raise ValueError("predicted and truth curves must share a grid")
    out = []
    for level in levels:
        level = float(level)
        entry = {"level": level, "available": False, "latency_ms": None,
                 "log10_error": None, "quantile_error_ms": None}
        # relative slack so analytic truth sitting exactly on a level matches it
        idx = np.flatnonzero(truth.probs <= level * (1.0 + 1e-9))
        if level >= truth.resolution and idx.size:
            j = int(idx[0])
            t = truth.probs[j]
            if t > 0:
                pred = max(predicted.probs[j], np.finfo(float).tiny)
                entry["available"] = True
                entry["latency_ms"] = float(truth.grid[j])
                entry["log10_error"] = float(np.log10(pred / t))
                yq = _crossing(predicted, t)
                entry["quantile_error_ms"] = None if yq is None else yq - float(truth.grid[j])
        out.append(entry)
    return out


# -- reports ------------------------------------------------------------------

@dataclass
class ConditionResult:
    condition: dict
    truth: CcdfCurve
    truth_kind: str  # "empirical" or "analytic"
    models: list  # CcdfCurve per model
    band: tuple  # (min, avg, max)
    metrics: dict


@dataclass
class EvaluationReport:
    conditions: list
    seeds: list
    config: dict = field(default_factory=dict)
    levels: tuple = DEFAULT_LEVELS


def evaluate(models: Sequence[ModelWeights], dataset: Optional[Dataset] = None,
             spec: Optional[SyntheticSpec] = None, levels=DEFAULT_LEVELS,
             grid_levels=None, config: Optional[dict] = None) -> EvaluationReport:
    """Compare every model against empirical (``dataset``) or analytic (``spec``) truth,
    per distinct condition."""
    if not models:
        raise ValueError("need at least one model")
    if (dataset is None) == (spec is None):
        raise ValueError("pass exactly one of dataset or spec")
    names = models[0].normalization.condition_names
    for m in models:
        if m.normalization.condition_names != names:
            raise ConfigError("models disagree on the condition schema")
    truth_names = dataset.condition_names if dataset is not None else spec.condition_names
    if tuple(truth_names) != tuple(names):
        raise ConfigError(f"truth conditions {list(truth_names)} do not match model schema {list(names)}")

    results = []
    if dataset is not None:
        cases = [(cond, sub.latency, None) for cond, sub in dataset.groups()]
    else:
        cases = [(tuple(g.condition), None, g.theta) for g in spec.groups]
    lv = evaluation_levels(levels, grid_levels)
    for cond, samples, theta in cases:
        if theta is None:
            grid = empirical_grid(samples, lv)
            truth = empirical_ccdf(samples, grid, "empirical", cond)
            kind = "empirical"
        else:
            grid = analytic_grid(theta, lv)
            truth = analytic_ccdf(theta, grid, "analytic", cond)
            kind = "analytic"
        curves = [predict_ccdf(m, cond, grid, label=f"model_{i}") for i, m in enumerate(models)]
        band = ensemble_bands(curves)
        metrics = {
            "levels": [float(v) for v in levels],
            "band_avg": tail_error(band[1], truth, levels),
            "per_model": [tail_error(c, truth, levels) for c in curves],
        }
        results.append(ConditionResult(dict(zip(names, cond)), truth, kind, curves, band, metrics))
    return EvaluationReport(results, [m.seed for m in models], dict(config or {}), tuple(levels))


def _write_curve(curve: CcdfCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latency_ms", "prob"])
        for y, p in zip(curve.grid.tolist(), curve.probs.tolist()):
            w.writerow([repr(y), repr(p)])


def read_curve(path, label="", condition=(), resolution=0.0) -> CcdfCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["latency_ms", "prob"]:
        raise FormatError(f"{path}: expected header latency_ms,prob")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
    return CcdfCurve(data[:, 0], data[:, 1], label, condition, resolution)


def emit_report(report: EvaluationReport, out_dir) -> str:
    """Write ``report.json`` plus one CSV per curve under ``out_dir/curves``."""
    os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)
    conds = []
    for ci, res in enumerate(report.conditions):
        truth_ref = f"curves/c{ci}_{res.truth_kind}.csv"
        _write_curve(res.truth, os.path.join(out_dir, truth_ref))
        model_refs = []
        for mi, curve in enumerate(res.models):
            ref = f"curves/c{ci}_model{mi}.csv"
            _write_curve(curve, os.path.join(out_dir, ref))
            model_refs.append({"label": curve.label, "seed": report.seeds[mi], "curve": ref})
        lo, avg, hi = res.band
        conds.append({
            "condition": res.condition,
            "truth_kind": res.truth_kind,
            "truth_resolution": res.truth.resolution,
            "empirical": truth_ref if res.truth_kind == "empirical" else None,
            "analytic": truth_ref if res.truth_kind == "analytic" else None,
            "models": model_refs,
            "band": {"grid": lo.grid.tolist(), "min": lo.probs.tolist(),
                     "avg": avg.probs.tolist(), "max": hi.probs.tolist()},
            "metrics": res.metrics,
        })
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "metric_note": METRIC_NOTE,
        "config": report.config,
        "seeds": list(report.seeds),
        "levels": list(report.levels),
        "conditions": conds,
    }
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return path


def read_report(path) -> EvaluationReport:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != REPORT_FORMAT_VERSION:
        raise FormatError(f"unsupported report format_version {doc.get('format_version')!r}")
    results = []
    for c in doc["conditions"]:
        cond = tuple(c["condition"].values())
        kind = c["truth_kind"]
        truth = read_curve(os.path.join(base, c[kind]), kind, cond, c["truth_resolution"])
        curves = [read_curve(os.path.join(base, m["curve"]), m["label"], cond) for m in c["models"]]
        b = c["band"]
        band = (CcdfCurve(b["grid"], b["min"], "min", cond), CcdfCurve(b["grid"], b["avg"], "avg", cond),
                CcdfCurve(b["grid"], b["max"], "max", cond))
        results.append(ConditionResult(dict(c["condition"]), truth, kind, curves, band, c["metrics"]))
    return EvaluationReport(results, list(doc["seeds"]), dict(doc["config"]), tuple(doc["levels"]))
