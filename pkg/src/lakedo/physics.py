"""Forward-Euler oxygen mass-balance steps for a two-layer lake.

Concentrations are g m^-3, volumes m^3, exogenous fluxes g m^-3 day^-1
relative to the start-of-day volume. Every step is a pure function, accepts
scalars or equal-shaped arrays, and is affine in the previous day's
concentrations, which keeps the gradient of any loss routed through these
steps exact. Simulated values may go negative; that is deliberate (the
daily scheme's instability is the signal the adaptive trainer feeds on),
so nothing here clamps unless explicitly asked to by the synthetic
generator's clamp flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .series import LakeSeries

__all__ = [
    "LayerState",
    "EntrainmentFluxes",
    "SubstepConfig",
    "simulate_mixed_step",
    "entrainment_fluxes_daily",
    "simulate_stratified_step",
    "closed_form_hyp_shrink",
    "closed_form_epi_shrink",
    "interpolate_volumes",
    "entrainment_fluxes_substep",
    "multi_step_euler",
    "mass_balance_residual",
    "simulate_targets",
    "simulate_trajectory",
]

#: Relative tolerance on the layer volume-change consistency precondition.
VOLUME_CHANGE_REL_TOL = 1e-9


@dataclass(frozen=True)
class LayerState:
    """Concentrations for one day; a field is None when the regime does not define it."""

    do_epi: float | None = None
    do_hyp: float | None = None
    do_total: float | None = None


@dataclass(frozen=True)
class EntrainmentFluxes:
    """Signed thermocline transport, g m^-3 day^-1 relative to receiving volumes."""

    f_epi: float | np.ndarray
    f_hyp: float | np.ndarray


@dataclass(frozen=True)
class SubstepConfig:
    """Sub-daily Euler resolution: k substeps spanning dt_days."""

    k: int = 1
    dt_days: float = 1.0

    def __post_init__(self) -> None:
        if not (isinstance(self.k, (int, np.integer)) and not isinstance(self.k, bool) and self.k >= 1):
            raise DomainError(f"substep count k must be an integer >= 1, got {self.k!r}")
        if not (np.isfinite(self.dt_days) and self.dt_days > 0):
            raise DomainError(f"dt_days must be positive and finite, got {self.dt_days!r}")


def _all_scalar(*xs) -> bool:
    return all(np.ndim(x) == 0 for x in xs)


def _require_finite(**named) -> None:
    for name, value in named.items():
        if not np.all(np.isfinite(value)):
            raise DomainError(f"{name} must be finite")


def _require_positive(**named) -> None:
    for name, value in named.items():
        value = np.asarray(value)
        if not np.all(np.isfinite(value) & (value > 0)):
            raise DomainError(f"{name} must be positive and finite")


def _check_volume_consistency(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur) -> None:
    d_epi = np.asarray(v_epi_cur, dtype=np.float64) - v_epi_prev
    d_hyp = np.asarray(v_hyp_cur, dtype=np.float64) - v_hyp_prev
    scale = np.asarray(v_epi_cur, dtype=np.float64) + v_hyp_cur
    if np.any(np.abs(d_epi + d_hyp) > VOLUME_CHANGE_REL_TOL * scale):
        raise DomainError("layer volume changes must cancel: the epilimnion gains exactly "
                          "what the hypolimnion loses")


def simulate_mixed_step(y_prev_total, f_exo_total, dt: float = 1.0):
    """One daily step under fully mixed conditions: y + f_exo * dt."""
    y = np.asarray(y_prev_total, dtype=np.float64)
    f = np.asarray(f_exo_total, dtype=np.float64)
    _require_finite(y_prev_total=y, f_exo_total=f, dt=dt)
    out = y + f * dt
    return float(out) if _all_scalar(y_prev_total, f_exo_total) else out


def entrainment_fluxes_daily(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur,
                             y_epi_prev, y_hyp_prev) -> EntrainmentFluxes:
    """Daily thermocline transport between the layers.

    The moving water carries the concentration of the layer it leaves: the
    hypolimnion's when the epilimnion grows (thermocline deepens), the
    epilimnion's when it shrinks. Each layer's flux is its own signed volume
    change times that source concentration, divided by the layer's
    current-day volume, so the transported mass cancels exactly:
    f_epi * v_epi_cur + f_hyp * v_hyp_cur = 0.
    """
    _require_positive(v_epi_prev=v_epi_prev, v_epi_cur=v_epi_cur,
                      v_hyp_prev=v_hyp_prev, v_hyp_cur=v_hyp_cur)
    _require_finite(y_epi_prev=y_epi_prev, y_hyp_prev=y_hyp_prev)
    _check_volume_consistency(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur)
    v_epi_prev = np.asarray(v_epi_prev, dtype=np.float64)
    v_hyp_prev = np.asarray(v_hyp_prev, dtype=np.float64)
    d_epi = v_epi_cur - v_epi_prev
    d_hyp = v_hyp_cur - v_hyp_prev
    y_src = np.where(v_epi_cur >= v_epi_prev, y_hyp_prev, y_epi_prev)
    f_epi = d_epi * y_src / v_epi_cur
    f_hyp = d_hyp * y_src / v_hyp_cur
    if _all_scalar(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur, y_epi_prev, y_hyp_prev):
        return EntrainmentFluxes(f_epi=float(f_epi), f_hyp=float(f_hyp))
    return EntrainmentFluxes(f_epi=f_epi, f_hyp=f_hyp)


def simulate_stratified_step(y_epi_prev, y_hyp_prev, f_exo_epi, f_exo_hyp,
                             v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur,
                             dt: float = 1.0):
    """One daily two-layer step: exogenous mass, volume rescaling, entrainment.

    Per layer: y_new = (y_prev + f_exo * dt) * (v_prev / v_cur) + f_ent,
    evaluated in mass form so that a single Algorithm substep (k = 1 in
    multi_step_euler) reproduces it bit for bit.
    """
    _require_finite(y_epi_prev=y_epi_prev, y_hyp_prev=y_hyp_prev,
                    f_exo_epi=f_exo_epi, f_exo_hyp=f_exo_hyp, dt=dt)
    ent = entrainment_fluxes_daily(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur,
                                   y_epi_prev, y_hyp_prev)
    y_e = (np.asarray(y_epi_prev, np.float64) * v_epi_prev + np.asarray(f_exo_epi, np.float64) * dt * v_epi_prev) / v_epi_cur + ent.f_epi
    y_h = (np.asarray(y_hyp_prev, np.float64) * v_hyp_prev + np.asarray(f_exo_hyp, np.float64) * dt * v_hyp_prev) / v_hyp_cur + ent.f_hyp
    if _all_scalar(y_epi_prev, y_hyp_prev, f_exo_epi, f_exo_hyp,
                   v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur):
        return float(y_e), float(y_h)
    return y_e, y_h


def closed_form_hyp_shrink(y_hyp_prev, f_exo_hyp, v_hyp_prev, v_hyp_cur, dt: float = 1.0):
    """Hypolimnion update when the epilimnion grows: y + f_exo * dt * (v_prev / v_cur).

    Entrainment out of a shrinking layer cancels its own rescaling, leaving
    only the exogenous term amplified by the volume ratio. A strong negative
    flux into a sharply shrinking hypolimnion drives this far below zero in
    a single daily step; that overshoot is the daily scheme's failure mode.
    """
    _require_positive(v_hyp_prev=v_hyp_prev, v_hyp_cur=v_hyp_cur)
    _require_finite(y_hyp_prev=y_hyp_prev, f_exo_hyp=f_exo_hyp, dt=dt)
    if np.any(np.asarray(v_hyp_cur) > np.asarray(v_hyp_prev)):
        raise DomainError("closed_form_hyp_shrink requires a shrinking (or constant) hypolimnion")
    out = np.asarray(y_hyp_prev, np.float64) + np.asarray(f_exo_hyp, np.float64) * dt * (np.asarray(v_hyp_prev, np.float64) / v_hyp_cur)
    return float(out) if _all_scalar(y_hyp_prev, f_exo_hyp, v_hyp_prev, v_hyp_cur) else out


def closed_form_epi_shrink(y_epi_prev, f_exo_epi, v_epi_prev, v_epi_cur, dt: float = 1.0):
    """Epilimnion update when it shrinks: y + f_exo * dt * (v_prev / v_cur)."""
    _require_positive(v_epi_prev=v_epi_prev, v_epi_cur=v_epi_cur)
    _require_finite(y_epi_prev=y_epi_prev, f_exo_epi=f_exo_epi, dt=dt)
    if np.any(np.asarray(v_epi_cur) > np.asarray(v_epi_prev)):
        raise DomainError("closed_form_epi_shrink requires a shrinking (or constant) epilimnion")
    out = np.asarray(y_epi_prev, np.float64) + np.asarray(f_exo_epi, np.float64) * dt * (np.asarray(v_epi_prev, np.float64) / v_epi_cur)
    return float(out) if _all_scalar(y_epi_prev, f_exo_epi, v_epi_prev, v_epi_cur) else out


def interpolate_volumes(v_prev, v_cur, k: int) -> np.ndarray:
    """k + 1 linearly interpolated volumes with exact endpoints."""
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise DomainError(f"substep count k must be an integer >= 1, got {k!r}")
    _require_positive(v_prev=v_prev, v_cur=v_cur)
    t = np.arange(k + 1, dtype=np.float64) / k
    out = np.asarray(v_prev, np.float64) * (1.0 - t) + np.asarray(v_cur, np.float64) * t
    return out


def entrainment_fluxes_substep(dv_epi, y_src, v_epi_next, v_hyp_next) -> EntrainmentFluxes:
    """Per-substep thermocline transport for an epilimnion volume increment dv_epi."""
    _require_positive(v_epi_next=v_epi_next, v_hyp_next=v_hyp_next)
    _require_finite(dv_epi=dv_epi, y_src=y_src)
    dv = np.asarray(dv_epi, dtype=np.float64)
    f_epi = dv * y_src / v_epi_next
    f_hyp = -dv * y_src / v_hyp_next
    if _all_scalar(dv_epi, y_src, v_epi_next, v_hyp_next):
        return EntrainmentFluxes(f_epi=float(f_epi), f_hyp=float(f_hyp))
    return EntrainmentFluxes(f_epi=f_epi, f_hyp=f_hyp)


def multi_step_euler(y_epi_prev, y_hyp_prev, f_exo_epi, f_exo_hyp,
                     v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur,
                     cfg: SubstepConfig = SubstepConfig(), clamp: bool = False):
    """One day advanced in cfg.k sub-daily Euler steps.

    Volumes are interpolated linearly across the day; each substep moves the
    exogenous mass f_exo * dt_sub * v_prev (rates are relative to the
    start-of-day volume), rescales by the interpolated volumes, then applies
    entrainment sourced from the running substep concentration. The clamp
    flag floors both layers at zero after every substep; it exists for the
    synthetic generator's ground-truth integration only.
    """
    _require_finite(y_epi_prev=y_epi_prev, y_hyp_prev=y_hyp_prev,
                    f_exo_epi=f_exo_epi, f_exo_hyp=f_exo_hyp)
    _require_positive(v_epi_prev=v_epi_prev, v_epi_cur=v_epi_cur,
                      v_hyp_prev=v_hyp_prev, v_hyp_cur=v_hyp_cur)
    _check_volume_consistency(v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur)
    scalar = _all_scalar(y_epi_prev, y_hyp_prev, f_exo_epi, f_exo_hyp,
                         v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur)
    y_e = np.asarray(y_epi_prev, dtype=np.float64)
    y_h = np.asarray(y_hyp_prev, dtype=np.float64)
    f_e = np.asarray(f_exo_epi, dtype=np.float64)
    f_h = np.asarray(f_exo_hyp, dtype=np.float64)
    ve_p = np.asarray(v_epi_prev, dtype=np.float64)
    ve_c = np.asarray(v_epi_cur, dtype=np.float64)
    vh_p = np.asarray(v_hyp_prev, dtype=np.float64)
    vh_c = np.asarray(v_hyp_cur, dtype=np.float64)

    k = cfg.k
    dt_sub = cfg.dt_days / k
    dv_epi = (ve_c - ve_p) / k
    grow = ve_c >= ve_p
    for i in range(k):
        t0 = i / k
        t1 = (i + 1) / k
        ve1 = ve_p * (1.0 - t1) + ve_c * t1
        vh1 = vh_p * (1.0 - t1) + vh_c * t1
        ve0 = ve_p * (1.0 - t0) + ve_c * t0
        vh0 = vh_p * (1.0 - t0) + vh_c * t0
        y_src = np.where(grow, y_h, y_e)
        ent = entrainment_fluxes_substep(dv_epi, y_src, ve1, vh1)
        m_e = y_e * ve0 + f_e * dt_sub * ve_p
        m_h = y_h * vh0 + f_h * dt_sub * vh_p
        y_e = m_e / ve1 + ent.f_epi
        y_h = m_h / vh1 + ent.f_hyp
        if clamp:
            y_e = np.maximum(y_e, 0.0)
            y_h = np.maximum(y_h, 0.0)
    if scalar:
        return float(y_e), float(y_h)
    return y_e, y_h


def mass_balance_residual(y_epi_prev, y_hyp_prev, y_epi_new, y_hyp_new,
                          v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur,
                          f_exo_epi, f_exo_hyp, dt: float = 1.0):
    """Signed mass defect of a candidate step, in grams.

    Total mass after the step, minus total mass before, minus the net
    exogenous mass added over dt. Zero (to rounding) for any state produced
    by simulate_stratified_step or multi_step_euler without clamping.
    """
    after = np.asarray(y_epi_new, np.float64) * v_epi_cur + np.asarray(y_hyp_new, np.float64) * v_hyp_cur
    before = np.asarray(y_epi_prev, np.float64) * v_epi_prev + np.asarray(y_hyp_prev, np.float64) * v_hyp_prev
    exo = (np.asarray(f_exo_epi, np.float64) * v_epi_prev + np.asarray(f_exo_hyp, np.float64) * v_hyp_prev) * dt
    out = after - before - exo
    scalar = _all_scalar(y_epi_prev, y_hyp_prev, y_epi_new, y_hyp_new,
                         v_epi_prev, v_epi_cur, v_hyp_prev, v_hyp_cur, f_exo_epi, f_exo_hyp)
    return float(out) if scalar else out


def _simulate_arrays(stratified: np.ndarray, v_total: np.ndarray,
                     v_epi: np.ndarray, v_hyp: np.ndarray,
                     f_exo_total: np.ndarray, f_exo_epi: np.ndarray, f_exo_hyp: np.ndarray,
                     pred_epi: np.ndarray, pred_hyp: np.ndarray, pred_total: np.ndarray,
                     k_per_day: np.ndarray, dt: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mass-balance targets for days 2..T, each seeded from the previous day's predictions.

    Returns (sim_epi, sim_hyp, sim_total) with NaN wherever a task is
    undefined (always on day 1). Days are independent given the predictions,
    so stratified steps are vectorized per distinct substep count.
    """
    t_count = stratified.shape[0]
    sim_epi = np.full(t_count, np.nan)
    sim_hyp = np.full(t_count, np.nan)
    sim_total = np.full(t_count, np.nan)
    if t_count < 2:
        return sim_epi, sim_hyp, sim_total

    prev_strat = stratified[:-1]
    cur_strat = stratified[1:]
    day = np.arange(1, t_count)

    # Mixed pair: plain exogenous step on the total.
    sel = day[~prev_strat & ~cur_strat]
    if sel.size:
        sim_total[sel] = pred_total[sel - 1] + f_exo_total[sel - 1] * dt

    # Spring onset: both layers inherit the previous day's total prediction.
    sel = day[~prev_strat & cur_strat]
    if sel.size:
        sim_epi[sel] = pred_total[sel - 1]
        sim_hyp[sel] = pred_total[sel - 1]

    # Fall turnover: volume-weighted mixture of the previous day's layers.
    sel = day[prev_strat & ~cur_strat]
    if sel.size:
        sim_total[sel] = (pred_epi[sel - 1] * v_epi[sel - 1]
                          + pred_hyp[sel - 1] * v_hyp[sel - 1]) / v_total[sel - 1]

    # Stratified pair: the two-layer scheme, grouped by substep count.
    strat_days = day[prev_strat & cur_strat]
    if strat_days.size:
        ks = np.asarray(k_per_day, dtype=np.int64)[strat_days]
        for kval in np.unique(ks):
            sel = strat_days[ks == kval]
            y_e, y_h = multi_step_euler(
                pred_epi[sel - 1], pred_hyp[sel - 1],
                f_exo_epi[sel - 1], f_exo_hyp[sel - 1],
                v_epi[sel - 1], v_epi[sel], v_hyp[sel - 1], v_hyp[sel],
                cfg=SubstepConfig(k=int(kval), dt_days=dt),
            )
            sim_epi[sel] = y_e
            sim_hyp[sel] = y_h
    return sim_epi, sim_hyp, sim_total


def _preds_to_arrays(preds, t_count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(preds, np.ndarray):
        if preds.shape != (t_count, 3):
            raise DomainError(f"prediction array must have shape ({t_count}, 3)")
        return preds[:, 0].astype(np.float64), preds[:, 1].astype(np.float64), preds[:, 2].astype(np.float64)
    if len(preds) != t_count:
        raise DomainError(f"predictions must cover all {t_count} days")
    none = np.nan
    e = np.array([none if p.do_epi is None else p.do_epi for p in preds], dtype=np.float64)
    h = np.array([none if p.do_hyp is None else p.do_hyp for p in preds], dtype=np.float64)
    t = np.array([none if p.do_total is None else p.do_total for p in preds], dtype=np.float64)
    return e, h, t


def simulate_targets(series: LakeSeries, preds, k_per_day=None,
                     dt: float = 1.0) -> np.ndarray:
    """Array form of simulate_trajectory: (T, 3) of epi/hyp/total, NaN where undefined."""
    t_count = series.n_days
    if k_per_day is None:
        k_per_day = np.ones(t_count, dtype=np.int64)
    k_per_day = np.asarray(k_per_day)
    if k_per_day.shape != (t_count,):
        raise DomainError("k_per_day must have one entry per day")
    if np.any(k_per_day < 1):
        raise DomainError("substep counts must be >= 1")
    pe, ph, pt = _preds_to_arrays(preds, t_count)
    sim_epi, sim_hyp, sim_total = _simulate_arrays(
        series.stratified, series.v_total, series.v_epi, series.v_hyp,
        series.f_exo_total, series.f_exo_epi, series.f_exo_hyp,
        pe, ph, pt, k_per_day, dt=dt)
    return np.stack([sim_epi, sim_hyp, sim_total], axis=1)


def simulate_trajectory(series: LakeSeries, preds, k_per_day=None,
                        dt: float = 1.0) -> list[LayerState | None]:
    """Per-day mass-balance states, each seeded from the previous day's predictions.

    preds: list of LayerState (or a (T, 3) array of epi/hyp/total, NaN where
    undefined). k_per_day: per-day substep counts for stratified steps
    (default 1 everywhere; mixed days ignore it). Day 1 has no simulated
    state and is returned as None.
    """
    sim = simulate_targets(series, preds, k_per_day=k_per_day, dt=dt)
    sim_epi, sim_hyp, sim_total = sim[:, 0], sim[:, 1], sim[:, 2]
    out: list[LayerState | None] = [None]
    t_count = series.n_days
    for t in range(1, t_count):
        out.append(LayerState(
            do_epi=float(sim_epi[t]) if np.isfinite(sim_epi[t]) else None,
            do_hyp=float(sim_hyp[t]) if np.isfinite(sim_hyp[t]) else None,
            do_total=float(sim_total[t]) if np.isfinite(sim_total[t]) else None,
        ))
    return out
