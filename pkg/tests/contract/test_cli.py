"""
Contract tests for the command-line interface: commands, artifacts and exit codes.
"""

import json
import math

import pytest
from click.testing import CliRunner

from cli.main import cli
from models import CalibrationRecord, ScoreKind
from services.conformal import write_record
from services.datasets import read_trajectories, read_triplets

TINY_CONFIG = """\
# small pendulum run
problem = pendulum
m = 10
n_train = 120
n_calib = 60
n_traj = 3
n_eval = 8
width = 8
shared_depth = 1
independent_depth = 1
epochs = 2
batch_size = 32
alpha = 0.1
ablation_n_values = 20,30
ablation_rounds = 3
n_val = 15
"""


@pytest.fixture
def workdir(temporary_directory):
    (temporary_directory / "tiny.cfg").write_text(TINY_CONFIG)
    return temporary_directory


def invoke(workdir, *args):
    return CliRunner().invoke(cli, ["-q", "--config", str(workdir / "tiny.cfg"), *args])


def datagen(workdir, split, name, *extra):
    path = workdir / name
    result = invoke(workdir, "datagen", "--problem", "pendulum", "--split", split, "--out", str(path), *extra)
    assert result.exit_code == 0, result.output
    return path


@pytest.fixture
def artifacts(workdir):
    """Train, calibration and test files plus a trained prob model."""
    train = datagen(workdir, "train", "train.opds")
    calib = datagen(workdir, "calib", "calib.opds")
    test = datagen(workdir, "test", "test.optraj")
    model = workdir / "prob.model"
    result = invoke(workdir, "train", "--model", "prob", "--data", str(train), "--out", str(model))
    assert result.exit_code == 0, result.output
    return {"train": train, "calib": calib, "test": test, "model": model}


@pytest.mark.contract
class TestCLIInterface:
    """Top-level command surface."""

    def test_help_lists_commands(self):
        result = CliRunner().invoke(cli, ["--help"])
        assert result.exit_code == 0
        for command in ("datagen", "train", "calibrate", "evaluate", "ablation", "reproduce"):
            assert command in result.output

    def test_version(self):
        result = CliRunner().invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "1.0.0" in result.output

    def test_unknown_command_is_usage_error(self):
        assert CliRunner().invoke(cli, ["fit"]).exit_code == 1

    def test_missing_config_file(self, temporary_directory):
        result = CliRunner().invoke(
            cli, ["--config", str(temporary_directory / "none.cfg"), "datagen", "--problem", "pendulum"]
        )
        assert result.exit_code == 2

    def test_bad_config_key(self, temporary_directory):
        path = temporary_directory / "bad.cfg"
        path.write_text("widht = 10\n")
        result = CliRunner().invoke(cli, ["--config", str(path), "datagen", "--problem", "pendulum"])
        assert result.exit_code == 1
        assert "widht" in result.output


@pytest.mark.contract
class TestDatagenCommand:
    """datagen writes .opds and .optraj files."""

    def test_triplet_file(self, workdir):
        path = datagen(workdir, "train", "train.opds", "--count", "25")
        data = read_triplets(path)
        assert (len(data), data.m, data.d) == (25, 10, 1)

    def test_default_count_from_config(self, workdir):
        assert len(read_triplets(datagen(workdir, "calib", "calib.opds"))) == 60

    def test_trajectory_file(self, workdir):
        data = read_trajectories(datagen(workdir, "test", "test.optraj", "--n-eval", "5"))
        assert (data.n_traj, data.n_eval) == (3, 5)

    def test_rerun_is_byte_identical(self, workdir):
        a = datagen(workdir, "train", "a.opds", "--count", "10", "--seed", "7")
        b = datagen(workdir, "train", "b.opds", "--count", "10", "--seed", "7")
        assert a.read_bytes() == b.read_bytes()

    def test_splits_differ(self, workdir):
        a = datagen(workdir, "train", "a.opds", "--count", "10")
        b = datagen(workdir, "calib", "b.opds", "--count", "10")
        assert a.read_bytes() != b.read_bytes()

    def test_low_fidelity_jump(self, workdir):
        path = workdir / "low.opds"
        result = invoke(
            workdir, "datagen", "--problem", "jump_mf", "--fidelity", "low", "--count", "12", "--out", str(path)
        )
        assert result.exit_code == 0, result.output
        assert len(read_triplets(path)) == 12

    def test_zero_count_is_usage_error(self, workdir):
        result = invoke(workdir, "datagen", "--problem", "pendulum", "--count", "0")
        assert result.exit_code == 1

    def test_unknown_problem(self, workdir):
        assert invoke(workdir, "datagen", "--problem", "heat").exit_code == 1


@pytest.mark.contract
class TestTrainCalibrateEvaluate:
    """The step-by-step workflow."""

    def test_train_writes_loss_log(self, artifacts):
        log = artifacts["model"].with_name("prob_loss.csv")
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,loss,lr"
        assert len(lines) == 3

    def test_train_missing_data_file(self, workdir):
        result = invoke(workdir, "train", "--model", "prob", "--data", str(workdir / "none.opds"))
        assert result.exit_code == 2

    def test_train_sensor_mismatch(self, workdir):
        path = datagen(workdir, "train", "m12.opds", "--count", "10", "--m", "12")
        result = invoke(workdir, "train", "--model", "prob", "--data", str(path))
        assert result.exit_code == 2

    def test_train_invalid_alpha(self, artifacts, workdir):
        result = invoke(workdir, "train", "--model", "quantile", "--data", str(artifacts["train"]), "--alpha", "1.5")
        assert result.exit_code == 1

    def test_calibrate_prints_quantile(self, artifacts, workdir):
        record_path = workdir / "prob.calib.json"
        result = invoke(
            workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
            "--out", str(record_path),
        )
        assert result.exit_code == 0, result.output
        assert "q_hat =" in result.output
        assert "k = 55" in result.output
        payload = json.loads(record_path.read_text())
        assert (payload["score_kind"], payload["n"], payload["k"]) == ("normalized_residual", 60, 55)

    def test_calibrate_too_few_points_warns(self, artifacts, workdir):
        small = datagen(workdir, "calib", "small.opds", "--count", "5")
        result = invoke(
            workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(small),
            "--alpha", "0.05", "--out", str(workdir / "small.calib.json"),
        )
        assert result.exit_code == 0
        assert "unbounded" in result.output
        assert json.loads((workdir / "small.calib.json").read_text())["q_hat"] == "inf"

    def test_evaluate_writes_reports(self, artifacts, workdir):
        record_path = workdir / "prob.calib.json"
        invoke(workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
               "--out", str(record_path))
        out = workdir / "eval"
        result = invoke(
            workdir, "evaluate", "--model", str(artifacts["model"]), "--record", str(record_path),
            "--data", str(artifacts["test"]), "--out-dir", str(out),
        )
        assert result.exit_code == 0, result.output
        assert "Mean coverage (conformalized)" in result.output
        for name in ("report.csv", "coverages.csv", "lengths.csv", "coverage_hist.csv"):
            assert (out / name).is_file()
        assert len((out / "report.csv").read_text().splitlines()) == 3
        trajectory_rows = (out / "trajectory_intervals.csv").read_text().splitlines()
        assert trajectory_rows[0] == "model,trajectory,x,G,G_hat,lo,hi,baseline_lo,baseline_hi"
        assert len(trajectory_rows) == 9

    def test_evaluate_rejects_mismatched_record(self, artifacts, workdir):
        record_path = workdir / "cqr.calib.json"
        write_record(record_path, CalibrationRecord(score_kind=ScoreKind.CQR, alpha=0.1, n=60, q_hat=0.1, k=55))
        result = invoke(
            workdir, "evaluate", "--model", str(artifacts["model"]), "--record", str(record_path),
            "--data", str(artifacts["test"]),
        )
        assert result.exit_code == 2

    def test_evaluate_trajectory_choice(self, artifacts, workdir):
        record_path = workdir / "prob.calib.json"
        invoke(workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
               "--out", str(record_path))
        args = ["evaluate", "--model", str(artifacts["model"]), "--record", str(record_path),
                "--data", str(artifacts["test"]), "--out-dir", str(workdir / "eval")]
        result = invoke(workdir, *args, "--trajectory", "2")
        assert result.exit_code == 0, result.output
        rows = (workdir / "eval" / "trajectory_intervals.csv").read_text().splitlines()[1:]
        assert {row.split(",")[1] for row in rows} == {"2"}
        assert invoke(workdir, *args, "--trajectory", "3").exit_code == 1

    def test_evaluate_rejects_trajectory_length_mismatch(self, artifacts, workdir):
        record_path = workdir / "prob.calib.json"
        invoke(workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
               "--out", str(record_path))
        assert json.loads(record_path.read_text())["n_eval"] == 8
        short = datagen(workdir, "test", "short.optraj", "--n-eval", "5")
        result = invoke(
            workdir, "evaluate", "--model", str(artifacts["model"]), "--record", str(record_path),
            "--data", str(short),
        )
        assert result.exit_code == 2
        assert "points per trajectory" in result.output

    def test_calibrate_n_eval_flag_sets_record(self, artifacts, workdir):
        record_path = workdir / "prob5.calib.json"
        result = invoke(workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
                        "--n-eval", "5", "--out", str(record_path))
        assert result.exit_code == 0, result.output
        short = datagen(workdir, "test", "short.optraj", "--n-eval", "5")
        result = invoke(
            workdir, "evaluate", "--model", str(artifacts["model"]), "--record", str(record_path),
            "--data", str(short), "--out-dir", str(workdir / "eval5"),
        )
        assert result.exit_code == 0, result.output

    def test_evaluate_corrupt_model(self, artifacts, workdir):
        broken = workdir / "broken.model"
        broken.write_text("deeponet v1\nnot a number\n")
        record_path = workdir / "r.calib.json"
        write_record(record_path, CalibrationRecord(
            score_kind=ScoreKind.NORMALIZED_RESIDUAL, alpha=0.1, n=60, q_hat=math.inf, k=61,
        ))
        result = invoke(
            workdir, "evaluate", "--model", str(broken), "--record", str(record_path), "--data", str(artifacts["test"]),
        )
        assert result.exit_code == 2

    def test_ensemble_training(self, artifacts, workdir):
        out = workdir / "ens.model"
        result = invoke(
            workdir, "train", "--model", "ensemble", "--ensemble-size", "2", "--data", str(artifacts["train"]),
            "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        assert "Final member losses" in result.output
        assert out.read_text().startswith("ensemble v1 M=2")


@pytest.mark.contract
class TestAblationCommand:
    """ablation --kind calib-size | adaptivity."""

    def test_calibration_size_from_pool_file(self, artifacts, workdir):
        pool = datagen(workdir, "pool", "pool.opds", "--count", "45")
        out = workdir / "ablation"
        result = invoke(
            workdir, "ablation", "--kind", "calib-size", "--model", str(artifacts["model"]),
            "--data", str(pool), "--out-dir", str(out),
        )
        assert result.exit_code == 0, result.output
        assert sorted(p.name for p in out.iterdir()) == ["ablation_n20.csv", "ablation_n30.csv", "ablation_summary.csv"]
        assert len((out / "ablation_n20.csv").read_text().splitlines()) == 4

    def test_calibration_size_generates_pool(self, artifacts, workdir):
        out = workdir / "generated"
        result = invoke(
            workdir, "ablation", "--kind", "calib-size", "--model", str(artifacts["model"]),
            "--n", "10,20", "--rounds", "2", "--out-dir", str(out),
        )
        assert result.exit_code == 0, result.output
        assert (out / "ablation_n10.csv").is_file()

    def test_adaptivity_needs_record(self, artifacts, workdir):
        result = invoke(
            workdir, "ablation", "--kind", "adaptivity", "--model", str(artifacts["model"]),
            "--data", str(artifacts["test"]),
        )
        assert result.exit_code == 1

    def test_adaptivity(self, artifacts, workdir):
        record_path = workdir / "prob.calib.json"
        invoke(workdir, "calibrate", "--model", str(artifacts["model"]), "--data", str(artifacts["calib"]),
               "--out", str(record_path))
        out = workdir / "adapt"
        result = invoke(
            workdir, "ablation", "--kind", "adaptivity", "--model", str(artifacts["model"]),
            "--record", str(record_path), "--data", str(artifacts["test"]), "--bins", "5", "--out-dir", str(out),
        )
        assert result.exit_code == 0, result.output
        assert len((out / "length_hist.csv").read_text().splitlines()) == 6


@pytest.mark.contract
class TestReproduceCommand:
    """reproduce runs the full pipeline into one directory."""

    def test_tiny_pendulum_run(self, workdir):
        root = workdir / "run"
        result = invoke(workdir, "reproduce", "--experiment", "pendulum", "--model", "prob", "--out-dir", str(root))
        assert result.exit_code == 0, result.output
        run_dir = root / "prob"
        for name in ("prob.model", "prob.calib.json", "prob_loss.csv", "report.csv", "length_hist.csv",
                     "ablation_summary.csv", "trajectory_intervals.csv"):
            assert (run_dir / name).is_file(), name
        assert len((root / "report.csv").read_text().splitlines()) == 3

    def test_rerun_is_reproducible(self, workdir):
        for name in ("a", "b"):
            result = invoke(
                workdir, "reproduce", "--experiment", "pendulum", "--model", "quantile", "--no-ablations",
                "--out-dir", str(workdir / name),
            )
            assert result.exit_code == 0, result.output
        for name in ("report.csv", "coverages.csv", "lengths.csv", "quantile/trajectory_intervals.csv"):
            assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()

    def test_invalid_alpha(self, workdir):
        result = invoke(workdir, "reproduce", "--experiment", "pendulum", "--alpha", "0")
        assert result.exit_code == 1

    def test_insufficient_calibration_exit_code(self, workdir):
        result = invoke(
            workdir, "reproduce", "--experiment", "pendulum", "--model", "prob", "--n-calib", "5",
            "--alpha", "0.05", "--no-ablations", "--out-dir", str(workdir / "r"),
        )
        assert result.exit_code == 3
