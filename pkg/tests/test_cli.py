"""Command-line behavior: files written, exit codes, reproducibility."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_series
from lakedo.cli import main
from lakedo.networks import load_checkpoint
from lakedo.series import write_series
from lakedo.training import validation_rmse, year_windows

GEN_CONFIG = {
    "schema": "lakedo-generate-v1",
    "n_lakes": 2,
    "n_years": 2,
    "obs_sparsity": 0.4,
    "truth_substeps": 24,
    "seed": 0,
}

TRAIN_CONFIG = {
    "schema": "lakedo-train-v1",
    "lambda_epi": 1.0,
    "lambda_hyp": 1.0,
    "learning_rate": 0.02,
    "max_epochs": 2,
    "patience": 2,
    "hidden_size": 20,
    "seed": 1,
    "window_days": 365,
    "train_years": 1,
}


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    cfg = write_json(root / "gen.json", GEN_CONFIG)
    out = root / "data"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def train_cfg(tmp_path_factory):
    root = tmp_path_factory.mktemp("cfg")
    return write_json(root / "train.json", TRAIN_CONFIG)


@pytest.fixture(scope="module")
def pril_run(data_dir, train_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "pril"
    assert main(["train", "--mode", "pril", "--data", str(data_dir),
                 "--out", str(out), "--config", str(train_cfg)]) == 0
    return out


class TestGenerate:
    def test_writes_lakes_truth_and_manifest(self, data_dir):
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == ["lake_00.csv", "lake_00_truth.csv",
                         "lake_01.csv", "lake_01_truth.csv", "manifest.json"]
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == 0
        assert len(manifest["config_sha256"]) == 64
        assert manifest["version"].startswith("lakedo-")
        assert len(manifest["outputs"]) == 4

    def test_same_seed_is_byte_identical(self, data_dir, tmp_path):
        cfg = write_json(tmp_path / "gen.json", GEN_CONFIG)
        again = tmp_path / "data"
        assert main(["generate", "--config", str(cfg), "--out", str(again)]) == 0
        for name in ("lake_00.csv", "lake_00_truth.csv", "lake_01.csv"):
            assert (again / name).read_bytes() == (data_dir / name).read_bytes()
        m0 = json.loads((data_dir / "manifest.json").read_text())
        m1 = json.loads((again / "manifest.json").read_text())
        assert m0["config_sha256"] == m1["config_sha256"]

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_json(tmp_path / "gen.json", GEN_CONFIG)
        out = tmp_path / "data"
        assert main(["generate", "--config", str(cfg), "--out", str(out),
                     "--seed", "9"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 9

    def test_zero_sparsity_rejected(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "gen.json",
                         dict(GEN_CONFIG, obs_sparsity=0.0))
        assert main(["generate", "--config", str(cfg),
                     "--out", str(tmp_path / "d")]) == 2
        assert "obs_sparsity" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "gen.json", dict(GEN_CONFIG, bogus=1))
        assert main(["generate", "--config", str(cfg),
                     "--out", str(tmp_path / "d")]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_wrong_schema_rejected(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "gen.json",
                         dict(GEN_CONFIG, schema="lakedo-train-v1"))
        assert main(["generate", "--config", str(cfg),
                     "--out", str(tmp_path / "d")]) == 2
        assert "schema" in capsys.readouterr().err


class TestTrain:
    def test_writes_checkpoint_history_manifest(self, pril_run):
        names = sorted(p.name for p in pril_run.iterdir())
        assert names == ["checkpoint.csv", "history.csv", "manifest.json"]
        with open(pril_run / "history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "epoch"
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        predictor, discriminator = load_checkpoint(pril_run / "checkpoint.csv")
        assert predictor is not None and discriminator is None

    def test_baseline_equals_pril_with_zero_weights(self, data_dir, tmp_path):
        cfg = write_json(tmp_path / "t.json",
                         dict(TRAIN_CONFIG, lambda_epi=0.0, lambda_hyp=0.0))
        outs = {}
        for mode in ("baseline", "pril"):
            out = tmp_path / mode
            assert main(["train", "--mode", mode, "--data", str(data_dir),
                         "--out", str(out), "--config", str(cfg)]) == 0
            outs[mode] = out
        for name in ("checkpoint.csv", "history.csv"):
            assert (outs["baseline"] / name).read_bytes() == \
                (outs["pril"] / name).read_bytes()

    def test_april_emits_labels_and_discriminator(self, data_dir, train_cfg,
                                                  tmp_path):
        out = tmp_path / "april"
        assert main(["train", "--mode", "april", "--data", str(data_dir),
                     "--out", str(out), "--config", str(train_cfg),
                     "--k", "6"]) == 0
        assert (out / "labels_00.csv").exists()
        assert (out / "labels_01.csv").exists()
        with open(out / "labels_00.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["date", "class", "provenance", "k"]
        ks = {row[3] for row in rows[1:]}
        assert ks <= {"1", "6"}

    def test_missing_data_dir_exit_2(self, train_cfg, tmp_path, capsys):
        assert main(["train", "--mode", "pril", "--data",
                     str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                     "--config", str(train_cfg)]) == 2
        assert "data directory" in capsys.readouterr().err

    def test_k_flag_outside_april_exit_2(self, data_dir, train_cfg, tmp_path,
                                         capsys):
        assert main(["train", "--mode", "pril", "--data", str(data_dir),
                     "--out", str(tmp_path / "o"), "--config", str(train_cfg),
                     "--k", "6"]) == 2
        assert "april" in capsys.readouterr().err

    def test_divergence_exit_3(self, tmp_path, capsys):
        # An absurdly large observation overflows the squared error.
        series = make_series("M" * 30, obs={t: (None, None, 1e200)
                                            for t in range(0, 30, 2)})
        data = tmp_path / "data"
        data.mkdir()
        write_series(series, data / "lake_t0.csv")
        cfg = write_json(tmp_path / "t.json",
                         dict(TRAIN_CONFIG, window_days=10, lambda_epi=0.0,
                              lambda_hyp=0.0))
        with np.errstate(over="ignore"):
            code = main(["train", "--mode", "pril", "--data", str(data),
                         "--out", str(tmp_path / "o"), "--config", str(cfg)])
        assert code == 3
        assert "epoch" in capsys.readouterr().err

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", "x", "--out", "y"])
        assert exc.value.code == 2


class TestEvaluate:
    def test_checkpoint_reproduces_validation_rmse(self, data_dir, train_cfg,
                                                   pril_run, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", str(pril_run / "checkpoint.csv"),
                     "--data", str(data_dir), "--out", str(out),
                     "--config", str(train_cfg)]) == 0
        with open(out / "comparison.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        got = np.array([float(rows[1][1]), float(rows[1][4]), float(rows[1][7])])

        predictor, _ = load_checkpoint(pril_run / "checkpoint.csv")
        from lakedo.series import load_series
        lakes = [load_series(p) for p in sorted(data_dir.glob("lake_*.csv"))
                 if not p.stem.endswith("_truth")]
        val = []
        for lake in lakes:
            val += [w for _, w in year_windows(lake, 365)[1:]]
        expected = validation_rmse(predictor, val)[:3]
        np.testing.assert_allclose(got, expected, rtol=1e-9)

        # The same numbers appear in some history row (the best epoch's).
        with open(pril_run / "history.csv", newline="") as fh:
            history = list(csv.reader(fh))[1:]
        matches = [row for row in history
                   if np.allclose([float(row[5]), float(row[6]), float(row[7])],
                                  got, rtol=1e-9)]
        assert matches

    def test_per_lake_timeseries_with_truth(self, data_dir, pril_run, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", str(pril_run / "checkpoint.csv"),
                     "--data", str(data_dir), "--out", str(out),
                     "--k", "12"]) == 0
        files = sorted(p.name for p in out.glob("timeseries_*.csv"))
        assert files == ["timeseries_00.csv", "timeseries_01.csv"]
        with open(out / "timeseries_00.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows[0]) == 13
        assert any(row[12] != "" for row in rows[1:])

    def test_corrupt_checkpoint_exit_2(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,checkpoint\n")
        assert main(["evaluate", str(bad), "--data", str(data_dir),
                     "--out", str(tmp_path / "o")]) == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_feature_mismatch_exit_2(self, pril_run, tmp_path, capsys):
        data = tmp_path / "narrow"
        data.mkdir()
        write_series(make_series("MSSM", obs={0: (None, None, 4.0)}),
                     data / "lake_zz.csv")
        assert main(["evaluate", str(pril_run / "checkpoint.csv"),
                     "--data", str(data), "--out", str(tmp_path / "o")]) == 2
        assert "feature columns" in capsys.readouterr().err


@pytest.fixture(scope="module")
def sweep_cfg(tmp_path_factory):
    payload = {
        "schema": "lakedo-sweep-v1",
        "lambda_epi": [0.0, 1.0],
        "lambda_hyp": [0.0],
        "train": {k: v for k, v in TRAIN_CONFIG.items()
                  if k not in ("schema", "lambda_epi", "lambda_hyp")},
    }
    return write_json(tmp_path_factory.mktemp("sweep") / "grid.json", payload)


class TestSweep:

    def test_grid_rows_in_order(self, data_dir, sweep_cfg, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(sweep_cfg),
                     "--data", str(data_dir), "--out", str(out)]) == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(("lambda_epi", "lambda_hyp", "rmse_epi",
                                "rmse_hyp", "rmse_total"))
        assert [(r[0], r[1]) for r in rows[1:]] == [("0", "0"), ("1", "0")]
        assert all(cell != "" for row in rows[1:] for cell in row)

    def test_zero_row_matches_baseline_run(self, data_dir, sweep_cfg, train_cfg,
                                           tmp_path):
        sweep_out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(sweep_cfg),
                     "--data", str(data_dir), "--out", str(sweep_out)]) == 0
        base_out = tmp_path / "base"
        assert main(["train", "--mode", "baseline", "--data", str(data_dir),
                     "--out", str(base_out), "--config", str(train_cfg)]) == 0
        eval_out = tmp_path / "eval"
        assert main(["evaluate", str(base_out / "checkpoint.csv"),
                     "--data", str(data_dir), "--out", str(eval_out),
                     "--config", str(train_cfg)]) == 0
        with open(sweep_out / "sweep.csv", newline="") as fh:
            zero_row = list(csv.reader(fh))[1]
        with open(eval_out / "comparison.csv", newline="") as fh:
            cmp_row = list(csv.reader(fh))[1]
        assert zero_row[2:5] == [cmp_row[1], cmp_row[4], cmp_row[7]]

    def test_threads_do_not_change_output(self, data_dir, sweep_cfg, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        assert main(["sweep", "--config", str(sweep_cfg), "--data",
                     str(data_dir), "--out", str(serial)]) == 0
        assert main(["sweep", "--config", str(sweep_cfg), "--data",
                     str(data_dir), "--out", str(parallel),
                     "--threads", "2"]) == 0
        assert (serial / "sweep.csv").read_bytes() == \
            (parallel / "sweep.csv").read_bytes()
