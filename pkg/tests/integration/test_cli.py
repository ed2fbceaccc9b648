"""End-to-end tests of the command line on a small synthetic run."""

import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from cmml_cli.cli.main import app
from tests.conftest import ml_style_rows, write_ratings_csv

runner = CliRunner()

SMALL = [
    "--logging.console_enabled=false",
    "--synthetic.n_tasks=20",
    "--synthetic.train_ratio=0.5",
    "--synthetic.latent_dim=3",
    "--synthetic.feature_dim=3",
    "--synthetic.support_size=8",
    "--synthetic.query_size=6",
    "--synthetic.n_items=60",
    "--synthetic.n_users=12",
    "--backbone.hidden_sizes=[5,4]",
    "--encoder.mlp_hidden=[5]",
    "--encoder.gru_hidden=4",
    "--generator.mlp_hidden=[4]",
    "--modulation.hyper_hidden=[5]",
    "--modulation.route_hidden=4",
    "--modulation.k_layers=2",
    "--modulation.n_modules=4",
    "--modulation.module_dim=2",
    "--training.task_batch_size=4",
    "--training.lr=0.001",
    "--baseline.inner_steps=2",
]


def invoke(*args):
    return runner.invoke(app, [*args, *SMALL])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Synthetic task set plus a two-epoch CMML model."""
    out = tmp_path_factory.mktemp("run")
    result = invoke("gen-synthetic", "--out", str(out), "--seed", "0")
    assert result.exit_code == 0, result.output
    result = invoke("train", "--out", str(out), "--epochs", "2")
    assert result.exit_code == 0, result.output
    return out


class TestWorkflow:
    def test_task_set_files(self, run_dir):
        names = ("tasks.csv", "user_embeddings.csv", "item_embeddings.csv", "hidden_vectors.csv")
        for name in names:
            assert (run_dir / name).exists(), name

    def test_training_artifacts(self, run_dir):
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "last.ckpt").exists()
        log_frame = pd.read_csv(run_dir / "epoch_log.csv")
        assert log_frame["epoch"].tolist() == [1, 2]

    def test_training_is_deterministic(self, run_dir):
        before = (run_dir / "last.ckpt").read_bytes()
        result = invoke("train", "--out", str(run_dir), "--epochs", "2")
        assert result.exit_code == 0, result.output
        assert (run_dir / "last.ckpt").read_bytes() == before

    def test_eval_writes_report(self, run_dir):
        result = invoke("eval", "--out", str(run_dir))
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(run_dir / "eval_cmml.csv", dtype={"task_id": str})
        assert {"mae", "mse", "mae_global_mean"} <= set(frame["metric"])
        assert "AGGREGATE" in set(frame["task_id"])

    def test_eval_zero_context(self, run_dir):
        result = invoke("eval", "--out", str(run_dir), "--zero-context")
        assert result.exit_code == 0, result.output
        assert (run_dir / "eval_cmml_zero_context.csv").exists()

    def test_export_context(self, run_dir):
        result = invoke("export-context", "--out", str(run_dir))
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(run_dir / "contexts.csv")
        assert list(frame.columns) == ["task_id", *[f"c{j}" for j in range(6)]]
        assert frame["task_id"].is_monotonic_increasing

    def test_export_routes_needs_soft_model(self, run_dir):
        result = invoke("export-routes", "--out", str(run_dir))
        assert result.exit_code == 1
        assert "soft" in result.output

    def test_bench(self, run_dir):
        result = invoke(
            "bench",
            "--out", str(run_dir),
            "--m", "8",
            "--k", "1",
            "--k", "2",
            "--repeats", "5",
            "--bench.warmup_runs=0",
            "--bench.max_timer_fraction=1.0",
        )
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(run_dir / "bench.csv")
        assert frame["method"].tolist() == ["baseline", "cmml", "baseline", "cmml"]
        trend = json.loads((run_dir / "bench_trend.json").read_text(encoding="utf-8"))
        assert set(trend) == {"trend", "host"}
        assert "8" in trend["trend"]


class TestBaseline:
    def test_train_and_eval(self, run_dir):
        result = invoke("train", "--out", str(run_dir), "--method", "baseline", "--epochs", "1")
        assert result.exit_code == 0, result.output
        assert (run_dir / "baseline-best.ckpt").exists()
        assert (run_dir / "baseline-epoch_log.csv").exists()

        result = invoke("eval", "--out", str(run_dir), "--method", "baseline")
        assert result.exit_code == 0, result.output
        assert (run_dir / "eval_baseline.csv").exists()

    def test_zero_context_is_cmml_only(self, run_dir):
        result = invoke("eval", "--out", str(run_dir), "--method", "baseline", "--zero-context")
        assert result.exit_code == 1


def test_soft_model_routes(tmp_path):
    out = str(tmp_path)
    assert invoke("gen-synthetic", "--out", out).exit_code == 0
    result = invoke("train", "--out", out, "--modulation", "soft", "--epochs", "1")
    assert result.exit_code == 0, result.output

    result = invoke("export-routes", "--out", out)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "routes.csv")
    sums = frame.groupby(["task_id", "layer", "from_module"])["probability"].sum()
    assert sums.round(9).eq(1.0).all()


def test_prepare_user_tasks(tmp_path):
    ratings = write_ratings_csv(tmp_path / "ratings.csv", ml_style_rows())
    out = tmp_path / "run"
    result = invoke(
        "prepare",
        "--ratings", ratings,
        "--setting", "user",
        "--out", str(out),
        "--data.label_mode=rating",
        "--mf.dim=3",
        "--mf.epochs=2",
    )
    assert result.exit_code == 0, result.output
    tasks = pd.read_csv(out / "tasks.csv")
    assert set(tasks["setting"]) == {"user"}
    assert not (out / "hidden_vectors.csv").exists()


class TestFailures:
    def test_eval_without_checkpoint(self, tmp_path):
        assert invoke("gen-synthetic", "--out", str(tmp_path)).exit_code == 0
        result = invoke("eval", "--out", str(tmp_path))
        assert result.exit_code == 1
        assert "train" in result.output

    def test_train_without_task_set(self, tmp_path):
        result = invoke("train", "--out", str(tmp_path))
        assert result.exit_code == 1
        assert "prepare" in result.output

    def test_invalid_override_value(self, tmp_path):
        result = invoke("gen-synthetic", "--out", str(tmp_path), "--training.epochs=-1")
        assert result.exit_code == 1
        assert "training.epochs" in result.output

    def test_malformed_override(self, tmp_path):
        result = invoke("gen-synthetic", "--out", str(tmp_path), "training.epochs=3")
        assert result.exit_code == 1
        assert "--key=value" in result.output

    def test_unknown_method(self, tmp_path):
        result = invoke("train", "--out", str(tmp_path), "--method", "maml")
        assert result.exit_code == 1

    def test_prepare_without_ratings(self, tmp_path):
        result = invoke("prepare", "--out", str(tmp_path))
        assert result.exit_code == 1
        assert "ratings" in result.output


def test_info_and_version():
    result = runner.invoke(app, ["info"])
    assert result.exit_code == 0, result.output
    assert "System Information" in result.output
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "cmml-cli" in result.output


@pytest.mark.slow
def test_ablate(tmp_path):
    result = invoke(
        "ablate",
        "--out", str(tmp_path),
        "--variants", "pooling-mean/dot,sequential/dot",
        "--n-seeds", "2",
        "--training.epochs=1",
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "ablation.csv")
    assert len(frame) == 4
    sign = json.loads((tmp_path / "ablation_sign_test.json").read_text(encoding="utf-8"))
    assert sign["wins"] + sign["losses"] + sign["ties"] == 2
