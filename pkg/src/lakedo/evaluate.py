"""Evaluation metrics and exports: per-task RMSE, mass inconsistency, tables.

Mass inconsistency measures how far predictions drift from the balance
scheme re-seeded from those same predictions: the mean over days 2..T of
|prediction - one-day-ahead simulation target|, per task, with the
stratified simulation run at a configurable reference substep count
(k = 192 by default; k = 1 gives the daily-scheme variant).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError
from .losses import TASK_NAMES, stacked_observations
from .physics import simulate_targets
from .series import LakeSeries, format_value

__all__ = [
    "REFERENCE_SUBSTEPS",
    "TIMESERIES_COLUMNS",
    "EvalReport",
    "rmse",
    "task_rmse",
    "mass_inconsistency",
    "reference_rollout",
    "regime_masked_predictions",
    "build_report",
    "compare_models",
    "export_timeseries",
]

REFERENCE_SUBSTEPS = 192

TIMESERIES_COLUMNS = (
    "date",
    "pred_epi", "pred_hyp", "pred_total",
    "sim_epi", "sim_hyp", "sim_total",
    "obs_epi", "obs_hyp", "obs_total",
    "true_epi", "true_hyp", "true_total",
)


def rmse(preds, obs, mask) -> float:
    """Root mean square error over the masked entries."""
    p = np.asarray(preds, dtype=np.float64)
    o = np.asarray(obs, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if p.shape != o.shape or p.shape != m.shape:
        raise DomainError("preds, obs, and mask must share a shape")
    if not m.any():
        raise DomainError("rmse over an empty mask")
    d = p[m] - o[m]
    return float(np.sqrt(np.mean(d * d)))


def task_rmse(preds: np.ndarray, series: LakeSeries) -> np.ndarray:
    """Per-task RMSE against the series observations, NaN where unobserved."""
    preds = _check_pred_shape(preds, series.n_days)
    obs = stacked_observations(series)
    out = np.full(3, np.nan)
    for task in range(3):
        m = np.isfinite(obs[:, task])
        if m.any():
            out[task] = rmse(preds[:, task], obs[:, task], m)
    return out


def _check_pred_shape(preds, n_days: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape != (n_days, 3):
        raise DomainError(f"predictions must have shape ({n_days}, 3)")
    return preds


def mass_inconsistency(preds: np.ndarray, series: LakeSeries,
                       k_reference: int = REFERENCE_SUBSTEPS,
                       days: np.ndarray | None = None) -> np.ndarray:
    """Per-task mean |prediction - balance target| over defined days.

    Each day's target is the one-day-ahead simulation seeded from the
    previous day's predictions, so the metric is zero exactly when the
    predictions already follow the scheme. `days` optionally restricts the
    mean to a boolean day subset (scenario-flagged days, say); a task with
    no defined day in the subset comes back NaN.
    """
    t = series.n_days
    if t < 2:
        raise DomainError("mass inconsistency needs at least two days")
    preds = _check_pred_shape(preds, t)
    k_per_day = np.full(t, int(k_reference), dtype=np.int64)
    targets = simulate_targets(series, preds, k_per_day=k_per_day)
    include = np.isfinite(targets)
    if days is not None:
        days = np.asarray(days, dtype=bool)
        if days.shape != (t,):
            raise DomainError("day subset must be a boolean mask over all days")
        include &= days[:, None]
    out = np.full(3, np.nan)
    for task in range(3):
        m = include[:, task]
        if m.any():
            out[task] = float(np.mean(np.abs(preds[m, task] - targets[m, task])))
    return out


def reference_rollout(series: LakeSeries, initial: Sequence[float],
                      k_reference: int = REFERENCE_SUBSTEPS) -> np.ndarray:
    """Trajectory obtained by rolling the balance scheme forward from day 1.

    `initial` is the (epi, hyp, total) state on the first day; entries for
    tasks undefined under that day's regime are ignored. Undefined cells
    stay NaN throughout. The result has zero mass inconsistency by
    construction, which makes it the anchor for metric tests.
    """
    t = series.n_days
    out = np.full((t, 3), np.nan)
    first = np.asarray(initial, dtype=np.float64)
    if first.shape != (3,):
        raise DomainError("initial state must have three entries")
    if series.stratified[0]:
        out[0, :2] = first[:2]
    else:
        out[0, 2] = first[2]
    k_pair = np.full(2, int(k_reference), dtype=np.int64)
    for day in range(1, t):
        window = series.subseries(day - 1, day + 1)
        step = simulate_targets(window, out[day - 1:day + 1], k_per_day=k_pair)
        out[day] = step[1]
    return out


def regime_masked_predictions(preds: np.ndarray, series: LakeSeries) -> np.ndarray:
    """Copy of raw (T, 3) predictions with regime-undefined cells set to NaN."""
    preds = _check_pred_shape(preds, series.n_days).copy()
    preds[~series.stratified, 0] = np.nan
    preds[~series.stratified, 1] = np.nan
    preds[series.stratified, 2] = np.nan
    return preds


@dataclass(frozen=True)
class EvalReport:
    """Per-model summary aggregated over seeds."""

    model: str
    n_seeds: int
    rmse_mean: np.ndarray
    rmse_std: np.ndarray
    inconsistency: np.ndarray
    timeseries_paths: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.model:
            raise DomainError("model name must be nonempty")
        if self.n_seeds < 1:
            raise DomainError("a report covers at least one seed")
        for name in ("rmse_mean", "rmse_std", "inconsistency"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (3,):
                raise DomainError(f"{name} must have one entry per task")
            object.__setattr__(self, name, a)
        for name in ("rmse_mean", "rmse_std"):
            a = getattr(self, name)
            if np.any(a[np.isfinite(a)] < 0):
                raise DomainError(f"{name} must be non-negative")


def build_report(model: str, rmse_per_seed: np.ndarray,
                 inconsistency_per_seed: np.ndarray,
                 timeseries_paths: Sequence[str] = ()) -> EvalReport:
    """Aggregate per-seed (n, 3) metric arrays into a report (NaN propagates)."""
    r = np.asarray(rmse_per_seed, dtype=np.float64)
    c = np.asarray(inconsistency_per_seed, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 3 or r.shape[0] < 1:
        raise DomainError("per-seed RMSE must have shape (n_seeds, 3)")
    if c.shape != r.shape:
        raise DomainError("per-seed metrics must share a shape")
    return EvalReport(model=model, n_seeds=r.shape[0],
                      rmse_mean=r.mean(axis=0), rmse_std=r.std(axis=0),
                      inconsistency=c.mean(axis=0),
                      timeseries_paths=tuple(timeseries_paths))


def compare_models(reports: Sequence[EvalReport],
                   path: str | Path | None = None) -> list[list[str]]:
    """Comparison table, one row per model; optionally written as CSV."""
    if not reports:
        raise DomainError("compare_models needs at least one report")
    header = ["model"]
    for task in TASK_NAMES:
        header += [f"{task}_rmse_mean", f"{task}_rmse_std", f"{task}_inconsistency"]
    rows = [header]
    for rep in reports:
        cells = [rep.model]
        for task in range(3):
            cells += [format_value(rep.rmse_mean[task]),
                      format_value(rep.rmse_std[task]),
                      format_value(rep.inconsistency[task])]
        rows.append(cells)
    if path is not None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return rows


def export_timeseries(path: str | Path, series: LakeSeries, preds: np.ndarray,
                      simulated: np.ndarray | None = None,
                      truth: np.ndarray | None = None,
                      k_reference: int = REFERENCE_SUBSTEPS) -> None:
    """Plot-ready per-day CSV of predictions, simulation, observations, truth.

    Absent values (undefined regime cells, missing observations, no truth)
    render as empty fields. The simulation defaults to the reference
    targets seeded from the predictions.
    """
    t = series.n_days
    preds = _check_pred_shape(preds, t)
    if simulated is None:
        simulated = simulate_targets(
            series, preds, k_per_day=np.full(t, int(k_reference), dtype=np.int64))
    else:
        simulated = _check_pred_shape(simulated, t)
    if truth is None:
        truth = np.full((t, 3), np.nan)
    else:
        truth = _check_pred_shape(truth, t)
    obs = stacked_observations(series)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        for i in range(t):
            cells = [int(series.dates[i])]
            for block in (preds, simulated, obs, truth):
                cells += [format_value(block[i, task]) for task in range(3)]
            writer.writerow(cells)
