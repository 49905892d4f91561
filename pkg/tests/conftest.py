"""Shared builders for hand-sized test series."""

from __future__ import annotations

import numpy as np
import pytest

from lakedo.series import LakeSeries


def make_series(regimes: str, lake_id: str = "t0", v_total: float = 300.0,
                v_epi=None, f_exo=(0.2, -0.4, 0.1), obs=None,
                features=None, start_date: int = 1) -> LakeSeries:
    """Small valid series from a regime string like 'MMSSSM'.

    v_epi: per-day epilimnion volumes (NaN entries filled on mixed days);
    defaults to a gentle ramp. f_exo: (epi, hyp, total) constants. obs: dict
    day_index -> (epi, hyp, total) tuples with None for absent.
    """
    t = len(regimes)
    strat = np.array([c == "S" for c in regimes])
    vt = np.full(t, float(v_total))
    if v_epi is None:
        ve = np.where(strat, v_total / 3.0 + 2.0 * np.arange(t), np.nan)
    else:
        ve = np.where(strat, np.asarray(v_epi, dtype=float), np.nan)
    vh = np.where(strat, vt - ve, np.nan)
    fe = np.where(strat, f_exo[0], np.nan)
    fh = np.where(strat, f_exo[1], np.nan)
    ft = np.full(t, f_exo[2])
    obs_epi = np.full(t, np.nan)
    obs_hyp = np.full(t, np.nan)
    obs_total = np.full(t, np.nan)
    for day, (oe, oh, ot) in (obs or {}).items():
        if oe is not None:
            obs_epi[day] = oe
        if oh is not None:
            obs_hyp[day] = oh
        if ot is not None:
            obs_total[day] = ot
    if features is None:
        features = np.zeros((t, 2))
    return LakeSeries(
        lake_id=lake_id,
        dates=np.arange(start_date, start_date + t),
        stratified=strat,
        v_total=vt,
        v_epi=ve,
        v_hyp=vh,
        f_exo_total=ft,
        f_exo_epi=fe,
        f_exo_hyp=fh,
        obs_total=obs_total,
        obs_epi=obs_epi,
        obs_hyp=obs_hyp,
        features=np.asarray(features, dtype=float),
    )


@pytest.fixture
def tiny_stratified_series() -> LakeSeries:
    return make_series("MSSSM")
