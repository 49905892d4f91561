"""Synthetic two-layer lake corpus with finely substepped ground truth.

Each lake gets a fixed total volume, a summer stratified span with a
drifting, noisy, occasionally shocked thermocline, gentle seasonal
exogenous fluxes, and a dissolved-oxygen truth trajectory integrated at
truth_substeps sub-daily Euler steps (clamped at zero; clamped days are
recorded because their mass budget intentionally does not close).
Observations are sparse daily visits with additive noise. Two stress
scenarios can be injected on stratified days: A collapses the hypolimnion
volume with an oxygen-demand kick the day before, B collapses the
epilimnion with a production kick. Both make the single-step daily scheme
overshoot while the finely substepped truth stays tame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, SchemaError
from .physics import SubstepConfig, multi_step_euler, simulate_mixed_step
from .series import LakeSeries, format_value, validate_series

__all__ = [
    "GenConfig",
    "GeneratedLake",
    "generate",
    "generate_lake",
    "inject_scenario_a",
    "inject_scenario_b",
    "sparsify_observations",
    "write_truth",
    "load_truth",
]

TRUTH_COLUMNS = ("date", "true_epi", "true_hyp", "true_total", "scenario_tag")

FEATURE_COUNT = 10


@dataclass(frozen=True)
class GenConfig:
    n_lakes: int = 4
    n_years: int = 3
    seed: int = 0
    v_total: float = 2_000_000.0
    year_days: int = 365
    strat_start: int = 135
    strat_end: int = 315
    epi_frac_start: float = 0.30
    epi_frac_end: float = 0.55
    epi_frac_ar: float = 0.85
    epi_frac_noise: float = 0.01
    shock_probability: float = 0.02
    shock_scale: float = 0.25
    initial_do: float = 10.0
    epi_flux_peak: float = 0.08
    hyp_demand_base: float = 0.07
    hyp_demand_ramp: float = 0.09
    flux_noise: float = 0.01
    mixed_flux_amplitude: float = 0.05
    obs_sparsity: float = 0.15
    obs_noise_sd: float = 0.3
    scenario_a_count: int = 1
    scenario_b_count: int = 1
    scenario_shrink_ratio: float = 10.0
    scenario_flux: float = 2.0
    truth_substeps: int = 192

    def __post_init__(self) -> None:
        if self.n_lakes < 1 or self.n_years < 1:
            raise ConfigError("n_lakes and n_years must be >= 1")
        if self.v_total <= 0:
            raise ConfigError("v_total must be > 0")
        if not 1 <= self.strat_start < self.strat_end <= self.year_days:
            raise ConfigError("stratified span must satisfy 1 <= start < end <= year_days")
        for name in ("epi_frac_start", "epi_frac_end"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not 0 <= self.epi_frac_ar < 1:
            raise ConfigError("epi_frac_ar must lie in [0, 1)")
        if not 0 <= self.shock_probability < 1:
            raise ConfigError("shock_probability must lie in [0, 1)")
        if not 0 < self.obs_sparsity <= 1:
            raise ConfigError("obs_sparsity must lie in (0, 1]: a dataset "
                              "without observations cannot train anything")
        if self.obs_noise_sd < 0 or self.epi_frac_noise < 0 or self.flux_noise < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.scenario_a_count < 0 or self.scenario_b_count < 0:
            raise ConfigError("scenario counts must be >= 0")
        if self.scenario_shrink_ratio < 10:
            raise ConfigError("scenario_shrink_ratio must be >= 10")
        if self.truth_substeps < 1:
            raise ConfigError("truth_substeps must be >= 1")
        if self.initial_do < 0:
            raise ConfigError("initial_do must be >= 0")


@dataclass(frozen=True)
class GeneratedLake:
    """A generated series plus everything the series deliberately hides."""

    series: LakeSeries
    truth: np.ndarray          # (days, 3) epi/hyp/total, NaN where undefined
    scenario_tags: np.ndarray  # (days,) '', 'A', or 'B'
    clamped: np.ndarray        # (days,) True where the truth integrator clamped
    obs_days: np.ndarray       # (days,) sampling visits
    weather: np.ndarray        # (days,) raw weather feature channel


@dataclass
class _Draft:
    """Mutable raw arrays a lake is assembled from."""

    dates: np.ndarray
    stratified: np.ndarray
    v_total: np.ndarray
    v_epi: np.ndarray          # NaN on mixed days
    f_epi: np.ndarray          # NaN on mixed days
    f_hyp: np.ndarray          # NaN on mixed days
    f_mixed: np.ndarray        # total-water flux used on mixed days
    scenario_tags: np.ndarray

    @property
    def v_hyp(self) -> np.ndarray:
        return np.where(self.stratified, self.v_total - self.v_epi, np.nan)


def _regime_calendar(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    t = cfg.n_years * cfg.year_days
    dates = np.arange(1, t + 1, dtype=np.int64)
    doy = (dates - 1) % cfg.year_days
    stratified = (doy >= cfg.strat_start) & (doy < cfg.strat_end)
    return dates, stratified


def _volumes(cfg: GenConfig, rng: np.random.Generator,
             stratified: np.ndarray, dates: np.ndarray) -> np.ndarray:
    """Per-day epilimnion volume: seasonal ramp + AR(1) wiggle + rare shocks."""
    t = dates.size
    doy = (dates - 1) % cfg.year_days
    span = cfg.strat_end - cfg.strat_start
    progress = np.clip((doy - cfg.strat_start) / max(span - 1, 1), 0.0, 1.0)
    ramp = cfg.epi_frac_start + (cfg.epi_frac_end - cfg.epi_frac_start) * progress
    frac = np.full(t, np.nan)
    state = 0.0
    for i in range(t):
        if not stratified[i]:
            state = 0.0
            continue
        state = cfg.epi_frac_ar * state + rng.normal(0.0, cfg.epi_frac_noise)
        if rng.random() < cfg.shock_probability:
            state += np.sign(rng.random() - 0.5) * cfg.shock_scale * ramp[i]
        frac[i] = np.clip(ramp[i] + state, 0.08, 0.92)
    return frac * cfg.v_total


def _fluxes(cfg: GenConfig, rng: np.random.Generator, stratified: np.ndarray,
            dates: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = dates.size
    doy = (dates - 1) % cfg.year_days
    span = cfg.strat_end - cfg.strat_start
    progress = np.clip((doy - cfg.strat_start) / max(span - 1, 1), 0.0, 1.0)
    season = np.sin(np.pi * progress)            # peaks mid-span
    f_epi = np.where(stratified,
                     cfg.epi_flux_peak * season + rng.normal(0, cfg.flux_noise, t),
                     np.nan)
    f_hyp = np.where(stratified,
                     -(cfg.hyp_demand_base + cfg.hyp_demand_ramp * progress)
                     + rng.normal(0, cfg.flux_noise, t),
                     np.nan)
    f_mixed = (cfg.mixed_flux_amplitude * np.sin(2 * np.pi * doy / cfg.year_days)
               + rng.normal(0, cfg.flux_noise, t))
    return f_epi, f_hyp, f_mixed


def _integrate_truth(cfg: GenConfig, draft: _Draft) -> tuple[np.ndarray, np.ndarray]:
    """Ground truth by forward integration, stratified days finely substepped."""
    t = draft.dates.size
    truth = np.full((t, 3), np.nan)
    clamped = np.zeros(t, dtype=bool)
    strat = draft.stratified
    v_epi, v_hyp, v_tot = draft.v_epi, draft.v_hyp, draft.v_total
    if strat[0]:
        raise DomainError("lake must start on a mixed day")
    truth[0, 2] = cfg.initial_do
    sub = SubstepConfig(k=cfg.truth_substeps)
    for i in range(1, t):
        if not strat[i - 1] and not strat[i]:
            total = simulate_mixed_step(truth[i - 1, 2], draft.f_mixed[i - 1])
            clamped[i] = total < 0.0
            truth[i, 2] = max(total, 0.0)
        elif not strat[i - 1]:
            truth[i, 0] = truth[i, 1] = truth[i - 1, 2]
            truth[i, 2] = truth[i - 1, 2]
        elif strat[i]:
            args = (truth[i - 1, 0], truth[i - 1, 1],
                    draft.f_epi[i - 1], draft.f_hyp[i - 1],
                    v_epi[i - 1], v_epi[i], v_hyp[i - 1], v_hyp[i])
            e, h = multi_step_euler(*args, cfg=sub, clamp=True)
            clamped[i] = (e, h) != multi_step_euler(*args, cfg=sub, clamp=False)
            truth[i, 0], truth[i, 1] = e, h
            truth[i, 2] = (e * v_epi[i] + h * v_hyp[i]) / v_tot[i]
        else:
            truth[i, 2] = (truth[i - 1, 0] * v_epi[i - 1]
                           + truth[i - 1, 1] * v_hyp[i - 1]) / v_tot[i - 1]
    return truth, clamped


def _features(cfg: GenConfig, draft: _Draft, weather: np.ndarray) -> np.ndarray:
    t = draft.dates.size
    doy = (draft.dates - 1) % cfg.year_days
    strat = draft.stratified
    v_epi = draft.v_epi
    rel = np.zeros(t)
    both = strat.copy()
    both[1:] &= strat[:-1]
    both[0] = False
    idx = np.flatnonzero(both)
    rel[idx] = (v_epi[idx] - v_epi[idx - 1]) / v_epi[idx - 1]
    f_total = _combined_total_flux(draft)
    raw = np.column_stack([
        np.sin(2 * np.pi * doy / cfg.year_days),
        np.cos(2 * np.pi * doy / cfg.year_days),
        strat.astype(np.float64),
        np.where(strat, v_epi / draft.v_total, 0.0),
        rel,
        np.where(strat, draft.f_epi, 0.0),
        np.where(strat, draft.f_hyp, 0.0),
        f_total,
        weather,
        doy / cfg.year_days,
    ])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    centered = raw - mean
    return np.where(std > 1e-12, centered / np.where(std > 1e-12, std, 1.0), 0.0)


def _combined_total_flux(draft: _Draft) -> np.ndarray:
    """Whole-lake flux column: the mixed flux, or the volume-weighted layer mix."""
    strat = draft.stratified
    weighted = np.where(
        strat,
        (np.where(strat, draft.f_epi, 0.0) * np.where(strat, draft.v_epi, 0.0)
         + np.where(strat, draft.f_hyp, 0.0) * np.where(strat, draft.v_hyp, 0.0))
        / draft.v_total,
        draft.f_mixed)
    return weighted


def _observations(cfg: GenConfig, obs_days: np.ndarray, noise: np.ndarray,
                  stratified: np.ndarray, truth: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = stratified.size
    obs_epi = np.full(t, np.nan)
    obs_hyp = np.full(t, np.nan)
    obs_total = np.full(t, np.nan)
    for i in np.flatnonzero(obs_days):
        if stratified[i]:
            obs_epi[i] = max(truth[i, 0] + noise[i, 0], 0.0)
            obs_hyp[i] = max(truth[i, 1] + noise[i, 1], 0.0)
        else:
            obs_total[i] = max(truth[i, 2] + noise[i, 0], 0.0)
    return obs_epi, obs_hyp, obs_total


def _assemble(cfg: GenConfig, draft: _Draft, weather: np.ndarray,
              obs_days: np.ndarray, noise: np.ndarray, lake_id: str) -> GeneratedLake:
    truth, clamped = _integrate_truth(cfg, draft)
    features = _features(cfg, draft, weather)
    obs_epi, obs_hyp, obs_total = _observations(cfg, obs_days, noise,
                                                draft.stratified, truth)
    series = LakeSeries(
        lake_id=lake_id,
        dates=draft.dates,
        stratified=draft.stratified,
        v_total=draft.v_total,
        v_epi=draft.v_epi,
        v_hyp=draft.v_hyp,
        f_exo_total=_combined_total_flux(draft),
        f_exo_epi=draft.f_epi,
        f_exo_hyp=draft.f_hyp,
        obs_total=obs_total,
        obs_epi=obs_epi,
        obs_hyp=obs_hyp,
        features=features,
    )
    report = validate_series(series)
    if not report.ok:
        raise DomainError(f"generated series failed validation: {report.entries[:3]}")
    return GeneratedLake(series=series, truth=truth,
                         scenario_tags=draft.scenario_tags, clamped=clamped,
                         obs_days=obs_days, weather=weather)


def _draft_from_series(series: LakeSeries, tags: np.ndarray) -> _Draft:
    strat = series.stratified
    # Recover the mixed-day flux column (on stratified days the stored total
    # flux is the volume-weighted layer mix and is rebuilt on assembly).
    return _Draft(dates=series.dates.copy(), stratified=strat.copy(),
                  v_total=series.v_total.copy(), v_epi=series.v_epi.copy(),
                  f_epi=series.f_exo_epi.copy(), f_hyp=series.f_exo_hyp.copy(),
                  f_mixed=np.where(strat, 0.0, series.f_exo_total),
                  scenario_tags=tags.copy())


def _apply_scenario(cfg: GenConfig, draft: _Draft, day: int, kind: str) -> None:
    t = draft.dates.size
    if not 1 <= day < t:
        raise DomainError("scenario day must have a previous day (day 1 onward)")
    if not (draft.stratified[day] and draft.stratified[day - 1]):
        raise DomainError("scenario day and its predecessor must both be stratified")
    if draft.scenario_tags[day]:
        raise DomainError(f"day {day} already carries a scenario")
    span_end = day
    while span_end < t and draft.stratified[span_end]:
        span_end += 1
    v_epi = draft.v_epi
    if kind == "A":
        # Hypolimnion collapses; demand kick the day before. The tail keeps
        # its old relative shape so later dynamics survive the rescale.
        old_tail = (draft.v_total[day:span_end] - v_epi[day:span_end]).copy()
        new_at_day = (draft.v_total[day - 1] - v_epi[day - 1]) / cfg.scenario_shrink_ratio
        draft.v_epi[day:span_end] = draft.v_total[day:span_end] - \
            new_at_day * (old_tail / old_tail[0])
        draft.f_hyp[day - 1] = -cfg.scenario_flux
    elif kind == "B":
        # Epilimnion collapses; production kick the day before.
        old_tail = v_epi[day:span_end].copy()
        new_at_day = v_epi[day - 1] / cfg.scenario_shrink_ratio
        draft.v_epi[day:span_end] = new_at_day * (old_tail / old_tail[0])
        draft.f_epi[day - 1] = cfg.scenario_flux
    else:
        raise DomainError(f"unknown scenario kind {kind!r}")
    draft.scenario_tags[day] = kind


def _pick_scenario_days(rng: np.random.Generator, stratified: np.ndarray,
                        count: int, taken: list[int]) -> list[int]:
    eligible = np.flatnonzero(stratified & np.roll(stratified, 1))
    eligible = eligible[eligible >= 1]
    rng.shuffle(eligible)
    picked: list[int] = []
    for day in eligible:
        if len(picked) == count:
            break
        if all(abs(int(day) - d) >= 3 for d in taken + picked):
            picked.append(int(day))
    if len(picked) < count:
        raise DomainError("not enough stratified days for the requested scenarios")
    return picked


def generate_lake(cfg: GenConfig, index: int) -> GeneratedLake:
    """One lake, deterministic in (cfg.seed, index)."""
    streams = np.random.SeedSequence([cfg.seed, index]).spawn(6)
    vol_rng, flux_rng, weather_rng, visit_rng, noise_rng, scen_rng = \
        (np.random.default_rng(s) for s in streams)

    dates, stratified = _regime_calendar(cfg)
    t = dates.size
    v_epi = _volumes(cfg, vol_rng, stratified, dates)
    f_epi, f_hyp, f_mixed = _fluxes(cfg, flux_rng, stratified, dates)
    draft = _Draft(dates=dates, stratified=stratified,
                   v_total=np.full(t, cfg.v_total), v_epi=v_epi,
                   f_epi=f_epi, f_hyp=f_hyp, f_mixed=f_mixed,
                   scenario_tags=np.full(t, "", dtype="<U1"))

    taken: list[int] = []
    plan: list[tuple[int, str]] = []
    for day in _pick_scenario_days(scen_rng, stratified, cfg.scenario_a_count, taken):
        plan.append((day, "A"))
        taken.append(day)
    for day in _pick_scenario_days(scen_rng, stratified, cfg.scenario_b_count, taken):
        plan.append((day, "B"))
        taken.append(day)
    # Ascending order: each tail rewrite reads the already-shifted draft, so
    # an earlier scenario's day-over-day jump survives a later one in the
    # same stratified span.
    for day, kind in sorted(plan):
        _apply_scenario(cfg, draft, day, kind)

    weather_noise = weather_rng.normal(0.0, 1.0, t)
    weather = np.empty(t)
    state = 0.0
    for i in range(t):
        state = 0.9 * state + weather_noise[i]
        weather[i] = state
    obs_days = visit_rng.random(t) < cfg.obs_sparsity
    noise = noise_rng.normal(0.0, cfg.obs_noise_sd, (t, 2))
    # Bare two-digit id: series files are written as lake_{id}.csv, and the
    # loader drops that prefix, so this survives a write/load round trip.
    return _assemble(cfg, draft, weather, obs_days, noise, f"{index:02d}")


def generate(cfg: GenConfig) -> list[GeneratedLake]:
    return [generate_lake(cfg, i) for i in range(cfg.n_lakes)]


def _inject(cfg: GenConfig, lake: GeneratedLake, day: int, kind: str,
            rng: np.random.Generator) -> GeneratedLake:
    draft = _draft_from_series(lake.series, lake.scenario_tags)
    _apply_scenario(cfg, draft, day, kind)
    noise = rng.normal(0.0, cfg.obs_noise_sd, (draft.dates.size, 2))
    return _assemble(cfg, draft, lake.weather, lake.obs_days, noise,
                     lake.series.lake_id)


def inject_scenario_a(cfg: GenConfig, lake: GeneratedLake, day: int,
                      rng: np.random.Generator) -> GeneratedLake:
    """Collapse the hypolimnion at `day` (>= 10x shrink) with a demand kick.

    The truth is re-integrated and observations are re-drawn on the same
    visit days with noise from `rng`.
    """
    return _inject(cfg, lake, day, "A", rng)


def inject_scenario_b(cfg: GenConfig, lake: GeneratedLake, day: int,
                      rng: np.random.Generator) -> GeneratedLake:
    """Collapse the epilimnion at `day` (>= 10x shrink) with a production kick."""
    return _inject(cfg, lake, day, "B", rng)


def sparsify_observations(series: LakeSeries, keep_fraction: float,
                          seed) -> LakeSeries:
    """Drop whole observation days, keeping each with probability keep_fraction."""
    if not 0 <= keep_fraction <= 1:
        raise DomainError("keep_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    observed = (np.isfinite(series.obs_epi) | np.isfinite(series.obs_hyp)
                | np.isfinite(series.obs_total))
    keep = rng.random(series.n_days) < keep_fraction
    drop = observed & ~keep
    def filtered(a):
        out = a.copy()
        out[drop] = np.nan
        return out
    return LakeSeries(
        lake_id=series.lake_id, dates=series.dates.copy(),
        stratified=series.stratified.copy(), v_total=series.v_total.copy(),
        v_epi=series.v_epi.copy(), v_hyp=series.v_hyp.copy(),
        f_exo_total=series.f_exo_total.copy(), f_exo_epi=series.f_exo_epi.copy(),
        f_exo_hyp=series.f_exo_hyp.copy(), obs_total=filtered(series.obs_total),
        obs_epi=filtered(series.obs_epi), obs_hyp=filtered(series.obs_hyp),
        features=series.features.copy())


def write_truth(path: str | Path, lake: GeneratedLake) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_COLUMNS)
        for i in range(lake.series.n_days):
            writer.writerow([int(lake.series.dates[i]),
                             format_value(lake.truth[i, 0]),
                             format_value(lake.truth[i, 1]),
                             format_value(lake.truth[i, 2]),
                             lake.scenario_tags[i]])


def load_truth(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a truth file back as (dates, truth (n,3), tags)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRUTH_COLUMNS:
        raise SchemaError(f"{path}: malformed truth header")
    dates, truth, tags = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise SchemaError(f"{path}: row {r}: expected 5 cells")
        dates.append(int(row[0]))
        truth.append([float(x) if x else np.nan for x in row[1:4]])
        tags.append(row[4])
    return (np.asarray(dates, dtype=np.int64), np.asarray(truth),
            np.asarray(tags, dtype="<U1"))
