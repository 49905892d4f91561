"""Per-lake daily time series and its CSV form.

A series carries, for each day: a regime flag (stratified or fully mixed),
layer and total volumes, exogenous oxygen flux rates, sparse noisy
observations, and a standardized feature vector for the learner. Absent
cells (layer volumes on mixed days, unobserved days) are NaN in memory and
empty cells on disk.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DomainError, OrderingError, SchemaError

__all__ = [
    "Regime",
    "RegimeSpan",
    "LakeSeries",
    "ObservationMask",
    "ValidationReport",
    "load_series",
    "write_series",
    "validate_series",
    "segment_regimes",
    "relative_epi_volume_change",
]

#: Relative tolerance for the stratified-day volume identity v_epi + v_hyp = v_total.
VOLUME_REL_TOL = 1e-9

_BASE_COLUMNS = (
    "date", "regime", "v_total", "v_epi", "v_hyp",
    "f_exo_total", "f_exo_epi", "f_exo_hyp",
    "obs_total", "obs_epi", "obs_hyp",
)
_FEAT_RE = re.compile(r"^feat_(\d+)$")


class Regime(enum.Enum):
    STRATIFIED = "S"
    MIXED = "M"


class RegimeSpan(NamedTuple):
    start: int
    end: int
    regime: Regime


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LakeSeries:
    """One lake's daily record. Arrays share length T; features are (T, m)."""

    lake_id: str
    dates: np.ndarray
    stratified: np.ndarray
    v_total: np.ndarray
    v_epi: np.ndarray
    v_hyp: np.ndarray
    f_exo_total: np.ndarray
    f_exo_epi: np.ndarray
    f_exo_hyp: np.ndarray
    obs_total: np.ndarray
    obs_epi: np.ndarray
    obs_hyp: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", _readonly(np.asarray(self.dates, dtype=np.int64)))
        object.__setattr__(self, "stratified", _readonly(np.asarray(self.stratified, dtype=bool)))
        for name in ("v_total", "v_epi", "v_hyp", "f_exo_total", "f_exo_epi",
                     "f_exo_hyp", "obs_total", "obs_epi", "obs_hyp"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.float64)))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DomainError("features must be a 2-D array of shape (days, channels)")
        object.__setattr__(self, "features", _readonly(feats))
        t = self.dates.shape[0]
        for name in ("stratified", "v_total", "v_epi", "v_hyp", "f_exo_total",
                     "f_exo_epi", "f_exo_hyp", "obs_total", "obs_epi", "obs_hyp"):
            if getattr(self, name).shape != (t,):
                raise DomainError(f"{name} must have the same length as dates")
        if feats.shape[0] != t:
            raise DomainError("features must have the same length as dates")

    @property
    def n_days(self) -> int:
        return int(self.dates.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def regime(self) -> np.ndarray:
        return _readonly(np.where(self.stratified, Regime.STRATIFIED, Regime.MIXED))

    def observation_mask(self) -> "ObservationMask":
        return ObservationMask(
            epi=np.isfinite(self.obs_epi),
            hyp=np.isfinite(self.obs_hyp),
            total=np.isfinite(self.obs_total),
        )

    def subseries(self, lo: int, hi: int) -> "LakeSeries":
        """Contiguous positional slice [lo, hi) as a new series (dates keep their values)."""
        if not (0 <= lo < hi <= self.n_days):
            raise DomainError(f"invalid slice [{lo}, {hi}) for {self.n_days} days")
        return LakeSeries(
            lake_id=self.lake_id,
            dates=self.dates[lo:hi].copy(),
            stratified=self.stratified[lo:hi].copy(),
            v_total=self.v_total[lo:hi].copy(),
            v_epi=self.v_epi[lo:hi].copy(),
            v_hyp=self.v_hyp[lo:hi].copy(),
            f_exo_total=self.f_exo_total[lo:hi].copy(),
            f_exo_epi=self.f_exo_epi[lo:hi].copy(),
            f_exo_hyp=self.f_exo_hyp[lo:hi].copy(),
            obs_total=self.obs_total[lo:hi].copy(),
            obs_epi=self.obs_epi[lo:hi].copy(),
            obs_hyp=self.obs_hyp[lo:hi].copy(),
            features=self.features[lo:hi].copy(),
        )


@dataclass(frozen=True)
class ObservationMask:
    """Boolean per-day observation masks, one per prediction task."""

    epi: np.ndarray
    hyp: np.ndarray
    total: np.ndarray

    def __post_init__(self) -> None:
        for name in ("epi", "hyp", "total"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=bool)))

    @property
    def counts(self) -> tuple[int, int, int]:
        return int(self.epi.sum()), int(self.hyp.sum()), int(self.total.sum())


@dataclass(frozen=True)
class ValidationReport:
    """Per-day invariant violations; empty means the series is well formed."""

    entries: tuple[tuple[int, str], ...]

    @property
    def ok(self) -> bool:
        return not self.entries


def validate_series(series: LakeSeries) -> ValidationReport:
    """Check every structural invariant and report (date, message) per violation."""
    entries: list[tuple[int, str]] = []
    dates = series.dates
    if dates.size and not np.all(np.diff(dates) == 1):
        bad = int(dates[np.nonzero(np.diff(dates) != 1)[0][0]])
        entries.append((bad, "dates must increase with unit spacing"))
    strat = series.stratified

    for t in range(series.n_days):
        day = int(dates[t])
        if not (np.isfinite(series.v_total[t]) and series.v_total[t] > 0):
            entries.append((day, "v_total must be positive and finite"))
        if strat[t]:
            ve, vh = series.v_epi[t], series.v_hyp[t]
            if not (np.isfinite(ve) and ve > 0):
                entries.append((day, "v_epi must be positive on stratified days"))
            if not (np.isfinite(vh) and vh > 0):
                entries.append((day, "v_hyp must be positive on stratified days"))
            if np.isfinite(ve) and np.isfinite(vh):
                vt = series.v_total[t]
                if abs(ve + vh - vt) > VOLUME_REL_TOL * abs(vt):
                    entries.append((day, "v_epi + v_hyp must equal v_total on stratified days"))
            for col in ("f_exo_epi", "f_exo_hyp"):
                if not np.isfinite(getattr(series, col)[t]):
                    entries.append((day, f"{col} must be present on stratified days"))
            if np.isfinite(series.obs_total[t]):
                entries.append((day, "obs_total is only defined on mixed days"))
        else:
            if np.isfinite(series.v_epi[t]) or np.isfinite(series.v_hyp[t]):
                entries.append((day, "layer volumes must be absent on mixed days"))
            if not np.isfinite(series.f_exo_total[t]):
                entries.append((day, "f_exo_total must be present on mixed days"))
            if np.isfinite(series.obs_epi[t]) or np.isfinite(series.obs_hyp[t]):
                entries.append((day, "layer observations are only defined on stratified days"))
        for col in ("obs_total", "obs_epi", "obs_hyp"):
            v = getattr(series, col)[t]
            if np.isfinite(v) and v < 0:
                entries.append((day, f"{col} must be non-negative"))
        if not np.all(np.isfinite(series.features[t])):
            entries.append((day, "features must be finite"))
    return ValidationReport(entries=tuple(entries))


def relative_epi_volume_change(series: LakeSeries) -> np.ndarray:
    """Signed day-over-day epilimnion volume change, 0 where either day lacks a layer."""
    out = np.zeros(series.n_days)
    both = series.stratified.copy()
    both[1:] &= series.stratified[:-1]
    both[0] = False
    idx = np.flatnonzero(both)
    out[idx] = (series.v_epi[idx] - series.v_epi[idx - 1]) / series.v_epi[idx - 1]
    return out


def segment_regimes(series: LakeSeries) -> list[RegimeSpan]:
    """Maximal runs of constant regime, as (start_date, end_date, regime)."""
    spans: list[RegimeSpan] = []
    if series.n_days == 0:
        return spans
    strat = series.stratified
    dates = series.dates
    run_start = 0
    for t in range(1, series.n_days + 1):
        if t == series.n_days or strat[t] != strat[run_start]:
            regime = Regime.STRATIFIED if strat[run_start] else Regime.MIXED
            spans.append(RegimeSpan(int(dates[run_start]), int(dates[t - 1]), regime))
            run_start = t
    return spans


def _parse_float(cell: str, day: int, col: str) -> float:
    if cell == "":
        return np.nan
    try:
        return float(cell)
    except ValueError as exc:
        raise DomainError(f"day {day}: column {col} is not a number: {cell!r}") from exc


def load_series(path: str | Path) -> LakeSeries:
    """Read one lake CSV; the lake id is the file stem (a leading 'lake_' is dropped)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]

    for i, col in enumerate(_BASE_COLUMNS):
        if i >= len(header) or header[i] != col:
            raise SchemaError(f"{path}: missing or misplaced column {col!r}")
    n_feat = len(header) - len(_BASE_COLUMNS)
    for j, col in enumerate(header[len(_BASE_COLUMNS):]):
        m = _FEAT_RE.match(col)
        if m is None or int(m.group(1)) != j:
            raise SchemaError(f"{path}: unexpected column {col!r} (expected feat_{j})")

    t_count = len(body)
    dates = np.zeros(t_count, dtype=np.int64)
    strat = np.zeros(t_count, dtype=bool)
    floats = {c: np.full(t_count, np.nan) for c in _BASE_COLUMNS[2:]}
    feats = np.zeros((t_count, n_feat))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        try:
            dates[r] = int(row[0])
        except ValueError as exc:
            raise OrderingError(f"{path}: row {r + 2}: date {row[0]!r} is not an integer") from exc
        if row[1] == "S":
            strat[r] = True
        elif row[1] == "M":
            strat[r] = False
        else:
            raise DomainError(f"{path}: row {r + 2}: regime must be 'S' or 'M', got {row[1]!r}")
        for c, col in enumerate(_BASE_COLUMNS[2:], start=2):
            floats[col][r] = _parse_float(row[c], int(dates[r]), col)
        for j in range(n_feat):
            feats[r, j] = _parse_float(row[len(_BASE_COLUMNS) + j], int(dates[r]), f"feat_{j}")

    if t_count and not np.all(np.diff(dates) == 1):
        raise OrderingError(f"{path}: dates must be strictly increasing with unit spacing")
    for col in ("v_total", "v_epi", "v_hyp"):
        bad = np.nonzero(np.isfinite(floats[col]) & (floats[col] <= 0))[0]
        if bad.size:
            raise DomainError(f"{path}: row {bad[0] + 2}: {col} must be positive")

    lake_id = path.stem
    if lake_id.startswith("lake_"):
        lake_id = lake_id[len("lake_"):]
    series = LakeSeries(
        lake_id=lake_id,
        dates=dates,
        stratified=strat,
        v_total=floats["v_total"],
        v_epi=floats["v_epi"],
        v_hyp=floats["v_hyp"],
        f_exo_total=floats["f_exo_total"],
        f_exo_epi=floats["f_exo_epi"],
        f_exo_hyp=floats["f_exo_hyp"],
        obs_total=floats["obs_total"],
        obs_epi=floats["obs_epi"],
        obs_hyp=floats["obs_hyp"],
        features=feats,
    )
    report = validate_series(series)
    if not report.ok:
        day, message = report.entries[0]
        raise DomainError(f"{path}: day {day}: {message} ({len(report.entries)} violation(s) total)")
    return series


def format_value(x: float) -> str:
    """Render a float at 17 significant digits; NaN becomes an empty cell."""
    if not np.isfinite(x):
        return ""
    return format(float(x), ".17g")


def write_series(series: LakeSeries, path: str | Path) -> None:
    """Write the CSV form; round-trips through load_series exactly."""
    path = Path(path)
    header = list(_BASE_COLUMNS) + [f"feat_{j}" for j in range(series.n_features)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(series.n_days):
            row = [str(int(series.dates[t])), "S" if series.stratified[t] else "M"]
            for col in _BASE_COLUMNS[2:]:
                row.append(format_value(getattr(series, col)[t]))
            row.extend(format_value(series.features[t, j]) for j in range(series.n_features))
            writer.writerow(row)
