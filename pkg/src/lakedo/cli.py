"""Command-line front end: generate, train, evaluate, sweep.

Every command resolves its config (JSON file plus flag overrides), runs,
and writes a manifest.json recording the command, a platform-stable hash
of the resolved config, the seed, input and output paths, the package
version, and the wall-clock duration. Exit codes: 0 success, 2 for
usage/config/data problems, 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from os import replace as atomic_replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .adaptive import AprilConfig, train_april, write_labels
from .errors import ConfigError, DomainError, TrainingDiverged
from .evaluate import (
    REFERENCE_SUBSTEPS,
    build_report,
    compare_models,
    export_timeseries,
    mass_inconsistency,
    regime_masked_predictions,
)
from .losses import stacked_observations
from .networks import load_checkpoint, predictor_forward, save_checkpoint
from .series import LakeSeries, format_value, load_series, write_series
from .synthetic import GenConfig, generate, load_truth, write_truth
from .training import (
    TrainConfig,
    train_pril,
    validation_rmse,
    write_history,
    year_windows,
)

__all__ = [
    "GENERATE_SCHEMA",
    "TRAIN_SCHEMA",
    "SWEEP_SCHEMA",
    "SWEEP_COLUMNS",
    "cmd_generate",
    "cmd_train",
    "cmd_evaluate",
    "cmd_sweep",
    "main",
]

GENERATE_SCHEMA = "lakedo-generate-v1"
TRAIN_SCHEMA = "lakedo-train-v1"
SWEEP_SCHEMA = "lakedo-sweep-v1"

SWEEP_COLUMNS = ("lambda_epi", "lambda_hyp", "rmse_epi", "rmse_hyp", "rmse_total")

MODES = ("baseline", "pril", "april")


def _read_json(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def _pop_schema(data: dict, expected: str, path) -> None:
    schema = data.pop("schema", None)
    if schema != expected:
        raise ConfigError(f"{path}: schema must be {expected!r}, got {schema!r}")


def _build(cls, data: dict, context: str):
    """Construct a config dataclass, rejecting unknown keys."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    if "disc_hidden" in data and isinstance(data["disc_hidden"], list):
        data["disc_hidden"] = tuple(data["disc_hidden"])
    return cls(**data)


def load_generate_config(path: str | Path | None) -> GenConfig:
    if path is None:
        return GenConfig()
    data = _read_json(path)
    _pop_schema(data, GENERATE_SCHEMA, path)
    return _build(GenConfig, data, str(path))


def load_train_config(path: str | Path | None) -> tuple[TrainConfig, AprilConfig]:
    if path is None:
        return TrainConfig(), AprilConfig()
    data = _read_json(path)
    _pop_schema(data, TRAIN_SCHEMA, path)
    april_data = data.pop("april", {})
    if not isinstance(april_data, dict):
        raise ConfigError(f"{path}: 'april' must be a JSON object")
    return (_build(TrainConfig, data, str(path)),
            _build(AprilConfig, april_data, f"{path}: april"))


def load_sweep_config(path: str | Path) -> tuple[list[float], list[float], TrainConfig]:
    data = _read_json(path)
    _pop_schema(data, SWEEP_SCHEMA, path)
    grids = {}
    for key in ("lambda_epi", "lambda_hyp"):
        values = data.pop(key, None)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}: {key} must be a nonempty list of weights")
        grids[key] = [float(v) for v in values]
    train_data = data.pop("train", {})
    if not isinstance(train_data, dict):
        raise ConfigError(f"{path}: 'train' must be a JSON object")
    if data:
        raise ConfigError(f"{path}: unknown keys {sorted(data)}")
    base = _build(TrainConfig, train_data, f"{path}: train")
    return grids["lambda_epi"], grids["lambda_hyp"], base


def _config_hash(resolved) -> str:
    """Platform-stable hash of the resolved config(s): canonical JSON, sha256."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_manifest(out_dir: Path, command: str, resolved_config, seed: int,
                    inputs: Sequence[str | Path], outputs: Sequence[str | Path],
                    started: float) -> Path:
    payload = {
        "command": command,
        "config_sha256": _config_hash(resolved_config),
        "seed": seed,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "version": f"lakedo-{__version__}",
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    path = out_dir / "manifest.json"
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    atomic_replace(tmp, path)
    return path


def _prepare_out(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lake_files(data_dir: str | Path) -> list[Path]:
    data = Path(data_dir)
    if not data.is_dir():
        raise DomainError(f"data directory not found: {data}")
    files = sorted(p for p in data.glob("*.csv") if not p.stem.endswith("_truth"))
    if not files:
        raise DomainError(f"no lake CSV files in {data}")
    return files


def _load_lakes(data_dir: str | Path) -> tuple[list[Path], list[LakeSeries]]:
    files = _lake_files(data_dir)
    return files, [load_series(p) for p in files]


def cmd_generate(config_path: str | Path | None, out_dir: str | Path,
                 seed: int | None = None) -> int:
    started = time.monotonic()
    cfg = load_generate_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out = _prepare_out(out_dir)
    outputs = []
    for lake in generate(cfg):
        series_path = out / f"lake_{lake.series.lake_id}.csv"
        truth_path = out / f"lake_{lake.series.lake_id}_truth.csv"
        write_series(lake.series, series_path)
        write_truth(truth_path, lake)
        outputs += [series_path, truth_path]
    inputs = [config_path] if config_path else []
    _write_manifest(out, "generate", asdict(cfg), cfg.seed, inputs, outputs, started)
    return 0


def cmd_train(mode: str, data_dir: str | Path, out_dir: str | Path,
              config_path: str | Path | None = None, seed: int | None = None,
              k: int | None = None) -> int:
    started = time.monotonic()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    config, april = load_train_config(config_path)
    if seed is not None:
        config = replace(config, seed=seed)
    if k is not None:
        if mode != "april":
            raise ConfigError("--k sets the drastic-day substep count and "
                              "only applies to mode=april")
        april = replace(april, k_drastic=k)
    if mode == "baseline":
        config = replace(config, lambda_epi=0.0, lambda_hyp=0.0, lambda_total=0.0)

    files, lakes = _load_lakes(data_dir)
    out = _prepare_out(out_dir)
    outputs = []
    if mode == "april":
        result = train_april(lakes, config, april)
        save_checkpoint(out / "checkpoint.csv", predictor=result.params,
                        discriminator=result.discriminator)
        for lake_id, labels in sorted(result.labels.items()):
            label_path = out / f"labels_{lake_id}.csv"
            write_labels(label_path, labels)
            outputs.append(label_path)
        history = result.history
    else:
        trained = train_pril(lakes, config)
        save_checkpoint(out / "checkpoint.csv", predictor=trained.params)
        history = trained.history
    history_path = out / "history.csv"
    write_history(history_path, history)
    outputs += [out / "checkpoint.csv", history_path]

    resolved = {"mode": mode, "train": asdict(config), "april": asdict(april)}
    inputs = list(files) + ([config_path] if config_path else [])
    _write_manifest(out, "train", resolved, config.seed, inputs, outputs, started)
    return 0


def _pooled_validation_rmse(params, lakes: Sequence[LakeSeries],
                            config: TrainConfig) -> np.ndarray:
    """Validation-window RMSE with the exact pooling the trainer reports."""
    val_windows = []
    for lake in lakes:
        windows = year_windows(lake, config.window_days)
        val_windows += [w for _, w in windows[config.train_years:]]
    if not val_windows:
        raise DomainError("no validation windows under this config")
    epi, hyp, total, _ = validation_rmse(params, val_windows)
    return np.array([epi, hyp, total])


def _full_series_rmse(params, lakes: Sequence[LakeSeries]) -> np.ndarray:
    sq = [[], [], []]
    for lake in lakes:
        preds = predictor_forward(params, lake.features)
        obs = stacked_observations(lake)
        for task in range(3):
            m = np.isfinite(obs[:, task])
            if m.any():
                d = preds[m, task] - obs[m, task]
                sq[task].append(d * d)
    return np.array([float(np.sqrt(np.mean(np.concatenate(s)))) if s else np.nan
                     for s in sq])


def cmd_evaluate(checkpoint: str | Path, data_dir: str | Path, out_dir: str | Path,
                 config_path: str | Path | None = None,
                 k_reference: int | None = None) -> int:
    started = time.monotonic()
    k_ref = REFERENCE_SUBSTEPS if k_reference is None else int(k_reference)
    predictor, _ = load_checkpoint(checkpoint)
    if predictor is None:
        raise DomainError(f"{checkpoint}: no predictor section in checkpoint")
    files, lakes = _load_lakes(data_dir)
    for path, lake in zip(files, lakes):
        if lake.n_features != predictor.n_features:
            raise DomainError(
                f"{path}: {lake.n_features} feature columns, but the "
                f"checkpoint expects {predictor.n_features}")
    out = _prepare_out(out_dir)

    outputs = []
    inconsistency = []
    for path, lake in zip(files, lakes):
        preds = predictor_forward(predictor, lake.features)
        truth = None
        truth_path = path.with_name(f"{path.stem}_truth.csv")
        if truth_path.exists():
            _, truth, _ = load_truth(truth_path)
        ts_path = out / f"timeseries_{lake.lake_id}.csv"
        export_timeseries(ts_path, lake, regime_masked_predictions(preds, lake),
                          truth=truth, k_reference=k_ref)
        outputs.append(ts_path)
        inconsistency.append(mass_inconsistency(preds, lake, k_reference=k_ref))

    if config_path is not None:
        config, _ = load_train_config(config_path)
        rmse_tasks = _pooled_validation_rmse(predictor, lakes, config)
    else:
        config = None
        rmse_tasks = _full_series_rmse(predictor, lakes)
    with np.errstate(invalid="ignore"):
        pooled_inc = np.nanmean(np.stack(inconsistency), axis=0)
    report = build_report(Path(checkpoint).stem, rmse_tasks[None, :],
                          pooled_inc[None, :],
                          timeseries_paths=[str(p) for p in outputs])
    comparison = out / "comparison.csv"
    compare_models([report], path=comparison)
    outputs.append(comparison)

    resolved = {"checkpoint": str(checkpoint), "k_reference": k_ref,
                "train": asdict(config) if config else None}
    seed = config.seed if config else 0
    inputs = [checkpoint] + list(files) + ([config_path] if config_path else [])
    _write_manifest(out, "evaluate", resolved, seed, inputs, outputs, started)
    return 0


def _best_epoch_rmse(result) -> tuple[float, float, float]:
    for row in result.history.rows:
        if row.epoch == result.best_epoch:
            return row.val_rmse_epi, row.val_rmse_hyp, row.val_rmse_total
    raise DomainError("best epoch missing from history")


def _sweep_point(args) -> tuple[float, float, tuple[float, float, float] | str]:
    lakes, config = args
    try:
        result = train_pril(lakes, config)
    except (TrainingDiverged, ValueError) as exc:
        return config.lambda_epi, config.lambda_hyp, f"{type(exc).__name__}: {exc}"
    return config.lambda_epi, config.lambda_hyp, _best_epoch_rmse(result)


def cmd_sweep(config_path: str | Path, data_dir: str | Path, out_dir: str | Path,
              seed: int | None = None, threads: int = 1) -> int:
    started = time.monotonic()
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    grid_epi, grid_hyp, base = load_sweep_config(config_path)
    if seed is not None:
        base = replace(base, seed=seed)
    files, lakes = _load_lakes(data_dir)
    out = _prepare_out(out_dir)

    jobs = [(lakes, replace(base, lambda_epi=le, lambda_hyp=lh))
            for le in grid_epi for lh in grid_hyp]
    if threads == 1:
        results = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_point, jobs))

    sweep_path = out / "sweep.csv"
    failures = []
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for le, lh, outcome in results:
            if isinstance(outcome, str):
                failures.append({"lambda_epi": le, "lambda_hyp": lh,
                                 "error": outcome})
                writer.writerow([format_value(le), format_value(lh), "", "", ""])
            else:
                writer.writerow([format_value(le), format_value(lh)]
                                + [format_value(v) for v in outcome])
    for failure in failures:
        print(f"sweep point {failure['lambda_epi']},{failure['lambda_hyp']} "
              f"failed: {failure['error']}", file=sys.stderr)

    resolved = {"lambda_epi": grid_epi, "lambda_hyp": grid_hyp,
                "train": asdict(base), "failures": failures}
    inputs = [config_path] + list(files)
    _write_manifest(out, "sweep", resolved, base.seed, inputs, [sweep_path], started)
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lakedo",
        description="Two-layer lake dissolved-oxygen models: synthetic data, "
                    "mass-guided training, evaluation, weight sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic lake dataset")
    g.add_argument("--config", help="generate config JSON (defaults otherwise)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="override the config seed")

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--mode", required=True, choices=MODES)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="train config JSON (defaults otherwise)")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--k", type=int,
                   help="drastic-day substep count (mode=april only)")

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint", help="checkpoint CSV from train")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--config", help="train config JSON: report RMSE on its "
                                    "validation split instead of all days")
    e.add_argument("--k", type=int,
                   help=f"reference substep count (default {REFERENCE_SUBSTEPS})")

    s = sub.add_parser("sweep", help="train across a conservation-weight grid")
    s.add_argument("--config", required=True, help="sweep grid config JSON")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--threads", type=int, default=1,
                   help="parallel sweep points (each point stays single-threaded)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args.config, args.out, seed=args.seed)
        if args.command == "train":
            return cmd_train(args.mode, args.data, args.out,
                             config_path=args.config, seed=args.seed, k=args.k)
        if args.command == "evaluate":
            return cmd_evaluate(args.checkpoint, args.data, args.out,
                                config_path=args.config, k_reference=args.k)
        return cmd_sweep(args.config, args.data, args.out,
                         seed=args.seed, threads=args.threads)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        # Covers the package error taxonomy (all ValueError subclasses)
        # plus unreadable paths.
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
