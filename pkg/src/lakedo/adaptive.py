"""Adaptive substep selection: label unstable days, learn to spot them, retrain.

Stage 1 trains the generator as usual with single daily mass-balance steps.
Stage 2 labels stratified days: a day whose prediction error exceeds gamma
(a multiple of the pooled residual RMSE) is numerically drastic, and a day
whose epilimnion volume moves by more than the volume threshold is drastic
no matter what anything else says. The labeled days then train a small
discriminator. Stage 3 lets the discriminator classify the unlabeled days,
assigns substep counts (1 for mild, k_drastic for drastic), and fine-tunes
the generator from the stage-1 weights against the refined targets. If no
day anywhere is drastic the fine-tune is skipped outright, so the result
is bit-identical to stage 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, SchemaError
from .networks import (
    DiscriminatorParams,
    PredictorParams,
    discriminator_forward,
    discriminator_logits_tape,
    init_discriminator,
    predictor_forward,
)
from .series import LakeSeries, relative_epi_volume_change
from .training import (
    TrainConfig,
    TrainHistory,
    TrainResult,
    adam_init,
    adam_update,
    train_pril,
)

__all__ = [
    "AprilConfig",
    "DayLabel",
    "AprilResult",
    "relative_epi_volume_change",
    "discriminator_inputs",
    "residual_gamma",
    "label_drastic_days",
    "train_discriminator",
    "classify_days",
    "k_policy_from_labels",
    "write_labels",
    "train_april",
]

LABEL_COLUMNS = ("date", "class", "provenance", "k")

VOLUME_RULE = "VOLUME_RULE"
ERROR_RULE = "ERROR_RULE"
DISCRIMINATOR = "DISCRIMINATOR"
FALLBACK = "FALLBACK"


@dataclass(frozen=True)
class AprilConfig:
    gamma_factor: float = 1.5
    volume_change_threshold: float = 0.20
    k_drastic: int = 12
    mild_probability_threshold: float = 0.5
    disc_hidden: tuple[int, ...] = (32, 32)
    disc_learning_rate: float = 0.01
    disc_epochs: int = 200
    finetune_epochs: int = 50

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma_factor) or self.gamma_factor <= 0:
            raise ConfigError("gamma_factor must be finite and > 0")
        if not np.isfinite(self.volume_change_threshold) or self.volume_change_threshold <= 0:
            raise ConfigError("volume_change_threshold must be finite and > 0")
        if self.k_drastic < 1:
            raise ConfigError("k_drastic must be >= 1")
        if not 0 < self.mild_probability_threshold < 1:
            raise ConfigError("mild_probability_threshold must lie in (0, 1)")
        if self.disc_learning_rate <= 0 or self.disc_epochs < 1:
            raise ConfigError("discriminator learning rate and epochs must be positive")
        if self.finetune_epochs < 1:
            raise ConfigError("finetune_epochs must be >= 1")


class DayLabel(NamedTuple):
    day: int            # positional index within the series
    date: int
    mild: bool
    provenance: str
    k: int


class _RuleLabel(NamedTuple):
    mild: bool
    provenance: str


@dataclass(frozen=True)
class AprilResult:
    params: PredictorParams
    history: TrainHistory
    labels: dict[str, list[DayLabel]]
    k_policies: dict[str, np.ndarray]
    discriminator: DiscriminatorParams | None
    stage1: TrainResult
    stage3_ran: bool
    gamma: float


def discriminator_inputs(series: LakeSeries) -> np.ndarray:
    """Per-day classifier inputs: features plus the raw relative volume change."""
    return np.column_stack([series.features, relative_epi_volume_change(series)])


def residual_gamma(lakes: Sequence[LakeSeries],
                   preds_by_lake: dict[str, np.ndarray],
                   factor: float) -> float:
    """gamma = factor times the RMSE pooled over every observed layer residual."""
    sq = []
    for lake in lakes:
        preds = preds_by_lake[lake.lake_id]
        for task, obs in ((0, lake.obs_epi), (1, lake.obs_hyp)):
            mask = np.isfinite(obs) & lake.stratified
            if mask.any():
                d = preds[mask, task] - obs[mask]
                sq.append(d * d)
    if not sq:
        raise DomainError("no observed layer residuals to calibrate gamma")
    return float(factor * np.sqrt(np.mean(np.concatenate(sq))))


def label_drastic_days(series: LakeSeries, preds: np.ndarray, gamma: float,
                       volume_threshold: float) -> dict[int, _RuleLabel]:
    """Rule labels for the stratified days the rules can actually judge.

    A day with any observed layer residual above gamma is drastic; a day
    whose epilimnion volume moved by more than volume_threshold is drastic
    regardless of residuals (that provenance wins). Unobserved days without
    a volume trigger stay unlabeled.
    """
    if gamma < 0 or volume_threshold <= 0:
        raise DomainError("gamma must be >= 0 and volume_threshold > 0")
    labels: dict[int, _RuleLabel] = {}
    rel = relative_epi_volume_change(series)
    for t in np.flatnonzero(series.stratified):
        residuals = []
        if np.isfinite(series.obs_epi[t]):
            residuals.append(abs(preds[t, 0] - series.obs_epi[t]))
        if np.isfinite(series.obs_hyp[t]):
            residuals.append(abs(preds[t, 1] - series.obs_hyp[t]))
        if abs(rel[t]) > volume_threshold:
            labels[int(t)] = _RuleLabel(mild=False, provenance=VOLUME_RULE)
        elif residuals:
            labels[int(t)] = _RuleLabel(mild=bool(max(residuals) <= gamma),
                                        provenance=ERROR_RULE)
    return labels


def train_discriminator(inputs: np.ndarray, is_mild: np.ndarray, april: AprilConfig,
                        seed) -> DiscriminatorParams:
    """Weighted-BCE training of the mild/drastic classifier (full batch Adam).

    The minority class is upweighted by the class-count ratio so a handful
    of drastic days still shapes the boundary.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    is_mild = np.asarray(is_mild, dtype=bool)
    if inputs.ndim != 2 or is_mild.shape != (inputs.shape[0],):
        raise DomainError("inputs must be (n, f) with one label per row")
    n_mild = int(is_mild.sum())
    n_drastic = is_mild.size - n_mild
    if n_mild == 0 or n_drastic == 0:
        raise DomainError("labeled days are single-class; classify by rules alone")
    ratio = max(n_mild, n_drastic) / min(n_mild, n_drastic)
    w_mild, w_drastic = (1.0, ratio) if n_mild >= n_drastic else (ratio, 1.0)
    denom = w_mild * n_mild + w_drastic * n_drastic

    params = dict(init_discriminator(inputs.shape[1], hidden=april.disc_hidden,
                                     seed=seed).to_blocks())
    opt = adam_init(params)
    mild_mask = is_mild[:, None]
    for _ in range(april.disc_epochs):
        tape = ad.Tape()
        pvars = {k: tape.param(v) for k, v in params.items()}
        z = discriminator_logits_tape(tape, pvars, inputs)
        pos = ad.masked_sum(ad.logsigmoid(z), mild_mask)
        neg = ad.masked_sum(ad.logsigmoid(ad.neg(z)), ~mild_mask)
        loss = ad.scale(ad.add(ad.scale(pos, w_mild), ad.scale(neg, w_drastic)),
                        -1.0 / denom)
        grads = tape.backward(loss)
        gdict = {k: grads[pvars[k].idx] for k in params}
        params, opt = adam_update(params, gdict, opt, april.disc_learning_rate)
    return DiscriminatorParams.from_blocks(params)


def classify_days(series: LakeSeries, rules: dict[int, _RuleLabel],
                  discriminator: DiscriminatorParams | None, april: AprilConfig,
                  fallback_mild: bool = True) -> list[DayLabel]:
    """Final per-day labels for every stratified day.

    Precedence: volume rule, then error rule, then the discriminator
    (drastic when its mild probability drops below the threshold), then the
    fallback class for days nothing can judge.
    """
    inputs = discriminator_inputs(series) if discriminator is not None else None
    labels = []
    for t in np.flatnonzero(series.stratified):
        rule = rules.get(int(t))
        if rule is not None:
            mild, provenance = rule.mild, rule.provenance
        elif discriminator is not None:
            p_mild = discriminator_forward(discriminator, inputs[t])
            mild = p_mild >= april.mild_probability_threshold
            provenance = DISCRIMINATOR
        else:
            mild, provenance = fallback_mild, FALLBACK
        labels.append(DayLabel(day=int(t), date=int(series.dates[t]), mild=mild,
                               provenance=provenance,
                               k=1 if mild else april.k_drastic))
    return labels


def k_policy_from_labels(series: LakeSeries, labels: Sequence[DayLabel]) -> np.ndarray:
    """Per-day substep counts: labeled stratified days keep their k, the rest 1."""
    k = np.ones(series.n_days, dtype=np.int64)
    for label in labels:
        k[label.day] = label.k
    return k


def write_labels(path: str | Path, labels: Sequence[DayLabel]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_COLUMNS)
        for label in labels:
            writer.writerow([label.date, "MILD" if label.mild else "DRASTIC",
                             label.provenance, label.k])


def load_labels(path: str | Path) -> list[DayLabel]:
    """Inverse of write_labels; day indices are not stored and come back as -1."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LABEL_COLUMNS:
        raise SchemaError(f"{path}: malformed label header")
    out = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 4 or row[1] not in ("MILD", "DRASTIC"):
            raise SchemaError(f"{path}: row {r}: malformed label row")
        out.append(DayLabel(day=-1, date=int(row[0]), mild=row[1] == "MILD",
                            provenance=row[2], k=int(row[3])))
    return out


def train_april(lakes: Sequence[LakeSeries], config: TrainConfig,
                april: AprilConfig | None = None) -> AprilResult:
    """Full adaptive pipeline: train, label, learn the labels, retrain.

    Deterministic given config.seed. When every stratified day comes out
    mild the stage-3 fine-tune is skipped and the returned parameters are
    exactly the stage-1 parameters.
    """
    april = april or AprilConfig()
    stage1 = train_pril(lakes, config)
    preds_by_lake = {lake.lake_id: predictor_forward(stage1.params, lake.features)
                     for lake in lakes}
    gamma = residual_gamma(lakes, preds_by_lake, april.gamma_factor)
    rules = {lake.lake_id: label_drastic_days(lake, preds_by_lake[lake.lake_id],
                                              gamma, april.volume_change_threshold)
             for lake in lakes}

    rows, is_mild = [], []
    for lake in lakes:
        inputs = discriminator_inputs(lake)
        for t, rule in sorted(rules[lake.lake_id].items()):
            rows.append(inputs[t])
            is_mild.append(rule.mild)
    is_mild = np.asarray(is_mild, dtype=bool)

    discriminator = None
    fallback_mild = True
    if rows and 0 < int(is_mild.sum()) < is_mild.size:
        discriminator = train_discriminator(
            np.vstack(rows), is_mild, april,
            seed=np.random.SeedSequence([config.seed, 3]))
    elif rows:
        # Single-class labels: no boundary to learn; propagate the one class.
        fallback_mild = bool(is_mild[0])

    labels = {lake.lake_id: classify_days(lake, rules[lake.lake_id], discriminator,
                                          april, fallback_mild=fallback_mild)
              for lake in lakes}
    k_policies = {lake.lake_id: k_policy_from_labels(lake, labels[lake.lake_id])
                  for lake in lakes}

    any_drastic = any(not label.mild for per_lake in labels.values()
                      for label in per_lake)
    if not any_drastic:
        return AprilResult(params=stage1.params, history=stage1.history,
                           labels=labels, k_policies=k_policies,
                           discriminator=discriminator, stage1=stage1,
                           stage3_ran=False, gamma=gamma)

    stage3 = train_pril(lakes, replace(config, max_epochs=april.finetune_epochs),
                        k_policies=k_policies, initial_params=stage1.params)
    history = TrainHistory(rows=list(stage1.history.rows))
    history.extend_renumbered(stage3.history)
    return AprilResult(params=stage3.params, history=history, labels=labels,
                       k_policies=k_policies, discriminator=discriminator,
                       stage1=stage1, stage3_ran=True, gamma=gamma)
