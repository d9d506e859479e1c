import csv
import os

import pytest
import yaml
from click.testing import CliRunner

from experiment_config import ENV_CONFIG, ENV_OUTPUT_DIR, ENV_SEED
from sym_experiments import cli, run_name

SMALL_CONFIG = {
    "seed": 7,
    "data": {"n_train": 32, "n_eval": 16},
    "model": {"width": 8},
    "train": {"batch_size": 8, "epoch_schedule": [[2, 0.01], [1, 0.001]], "log_every": 0},
    "landscape": {"x_points": 11, "y_points": 6},
    "sweep": {"widths": [4]},
    "probe": {"channels": 4, "height": 2, "width": 2, "k": 2, "reduction": 2, "n_train": 16, "n_eval": 8,
              "batch_size": 8, "epoch_schedule": [[2, 0.01]], "alpha": [1.0, 1.0]},
}


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in (ENV_CONFIG, ENV_SEED, ENV_OUTPUT_DIR):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return str(path)


@pytest.fixture
def run(config_file):
    runner = CliRunner()

    def invoke(out, *args):
        return runner.invoke(cli, ["--config", config_file, "--out", str(out), *args])

    return invoke


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_names():
    assert run_name("sym") == "sym"
    assert run_name("hyper", [0.75, 0.25]) == "hyper_0.75_0.25"
    assert run_name("hyper", [1.0, 0.0]) == "hyper_1_0"


def test_generate_data_grid(tmp_path, run):
    result = run(tmp_path / "out", "generate-data", "--n", "4", "--sampling", "uniform_grid")
    assert result.exit_code == 0, result.output
    rows = read_rows(tmp_path / "out" / "train.csv")
    assert rows[0] == ["x", "y_r", "y_c"]
    assert [float(row[0]) for row in rows[1:]] == pytest.approx([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], abs=1e-15)
    assert "seed 7" in result.output
    assert os.path.exists(tmp_path / "out" / "run_metadata.yaml")


def test_generate_data_is_byte_deterministic(tmp_path, run):
    for name in ("a", "b"):
        assert run(tmp_path / name, "generate-data").exit_code == 0
    for name in ("train.csv", "eval.csv"):
        assert read_bytes(tmp_path / "a" / name) == read_bytes(tmp_path / "b" / name)


def test_generate_data_rejects_tiny_n(tmp_path, run):
    assert run(tmp_path / "out", "generate-data", "--n", "1").exit_code == 2


def test_bad_config_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("unknown_key: 1\n")
    result = CliRunner().invoke(cli, ["--config", str(path), "--out", str(tmp_path / "out"), "generate-data"])
    assert result.exit_code == 2


@pytest.mark.parametrize("section", [
    {"model": {"width": "wide"}},
    {"train": {"epoch_schedule": [["two", 0.01]]}},
])
def test_wrongly_typed_config_values_are_usage_errors(tmp_path, section):
    path = tmp_path / "typed.yaml"
    path.write_text(yaml.safe_dump(section))
    result = CliRunner().invoke(cli, ["--config", str(path), "--out", str(tmp_path / "out"), "generate-data"])
    assert result.exit_code == 2


def test_train_without_data(tmp_path, run):
    assert run(tmp_path / "out", "train").exit_code == 3


def test_train_writes_checkpoint_and_history(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    result = run(out, "train", "--mode", "sym")
    assert result.exit_code == 0, result.output
    assert os.path.exists(out / "checkpoints" / "sym.json")
    rows = read_rows(out / "history_sym.csv")
    assert rows[0] == ["epoch", "batch", "s_1", "s_2", "total_loss", "regression", "classification"]
    assert len(rows) == 1 + 3 * 4


def test_hyper_training_needs_fixed_weights(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    assert run(out, "train", "--mode", "hyper").exit_code == 2
    assert run(out, "train", "--mode", "hyper", "--fixed-weights", "0.6,0.6").exit_code == 2
    assert run(out, "train", "--mode", "hyper", "--fixed-weights", "a,b").exit_code == 2
    assert run(out, "train", "--mode", "hyper", "--fixed-weights", "1,0").exit_code == 0
    assert os.path.exists(out / "checkpoints" / "hyper_1_0.json")


def test_training_is_byte_deterministic(tmp_path, run):
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(out, "generate-data").exit_code == 0
        assert run(out, "train").exit_code == 0
    for name in ("checkpoints/sym.json", "history_sym.csv"):
        assert read_bytes(tmp_path / "a" / name) == read_bytes(tmp_path / "b" / name)


def test_resume_matches_uninterrupted_training(tmp_path, run):
    full, split = tmp_path / "full", tmp_path / "split"
    for out in (full, split):
        assert run(out, "generate-data").exit_code == 0
    assert run(full, "train").exit_code == 0

    result = run(split, "train", "--epochs-limit", "1")
    assert result.exit_code == 0
    assert "resume" in result.output
    result = run(split, "train", "--resume", str(split / "checkpoints" / "sym.json"))
    assert result.exit_code == 0, result.output

    for name in ("checkpoints/sym.json", "history_sym.csv"):
        assert read_bytes(full / name) == read_bytes(split / name)


def test_evaluate_and_compare(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    assert run(out, "train").exit_code == 0
    hyper_args = []
    for weights in ("1,0", "0,1"):
        assert run(out, "train", "--mode", "hyper", "--fixed-weights", weights).exit_code == 0
        hyper_args += ["--hyper", str(out / "checkpoints" / f"hyper_{weights.replace(',', '_')}.json")]

    result = run(out, "evaluate", str(out / "checkpoints" / "sym.json"), *hyper_args)
    assert result.exit_code == 0, result.output
    rows = read_rows(out / "evaluation_sym.csv")
    assert rows[0] == ["w_r", "w_c", "L_total", "L_r", "L_c"]
    assert len(rows) == 6
    first, last = rows[1], rows[-1]
    assert first[:2] == ["1.0", "0.0"] and first[2] == first[3]
    assert last[:2] == ["0.0", "1.0"] and last[2] == last[4]
    comparison = read_rows(out / "comparison.csv")
    assert len(comparison) == 6
    assert comparison[1][5] != "" and comparison[3][5] == ""


def test_evaluate_custom_grid(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    assert run(out, "train").exit_code == 0
    checkpoint = str(out / "checkpoints" / "sym.json")
    assert run(out, "evaluate", checkpoint, "--grid", "1,0;0.5,0.5").exit_code == 0
    assert len(read_rows(out / "evaluation_sym.csv")) == 3
    assert run(out, "evaluate", checkpoint, "--grid", "0.5,0.6").exit_code == 2


def test_evaluate_rejects_non_hyper_comparison(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    assert run(out, "train").exit_code == 0
    checkpoint = str(out / "checkpoints" / "sym.json")
    assert run(out, "evaluate", checkpoint, "--hyper", checkpoint).exit_code == 2


def test_corrupt_checkpoint(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1')
    assert run(out, "evaluate", str(bad)).exit_code == 3
    assert run(out, "evaluate", str(tmp_path / "missing.json")).exit_code == 3


def test_landscape_without_model(tmp_path, run):
    out = tmp_path / "out"
    result = run(out, "landscape", "--s", "0.5,0.5", "--pgm")
    assert result.exit_code == 0, result.output
    assert len(read_rows(out / "landscape_values.csv")) == 6
    assert not os.path.exists(out / "landscape_overlay.csv")
    with open(out / "landscape.pgm") as f:
        assert f.read().startswith("P2\n11 6\n255\n")


def test_landscape_with_model_and_extrapolation(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    assert run(out, "train").exit_code == 0
    checkpoint = str(out / "checkpoints" / "sym.json")
    assert run(out, "landscape", "--s", "0,1.5", "--checkpoint", checkpoint).exit_code == 3
    result = run(out, "landscape", "--s", "0,1.5", "--unchecked", "--checkpoint", checkpoint)
    assert result.exit_code == 0, result.output
    assert len(read_rows(out / "landscape_overlay.csv")) == 12


def test_sample_dirichlet(tmp_path, run):
    out = tmp_path / "out"
    result = run(out, "sample-dirichlet", "--n", "500", "--alpha", "0.5,0.5")
    assert result.exit_code == 0, result.output
    rows = read_rows(out / "dirichlet_draws.csv")
    assert rows[0] == ["s_1", "s_2"] and len(rows) == 501
    assert run(out, "sample-dirichlet", "--alpha", "0.5,0").exit_code == 2
    assert run(out, "sample-dirichlet", "--n", "0").exit_code == 2


def test_sweep_size(tmp_path, run):
    out = tmp_path / "out"
    assert run(out, "generate-data").exit_code == 0
    result = run(out, "sweep-size", "--widths", "4")
    assert result.exit_code == 0, result.output
    rows = read_rows(out / "size_sweep.csv")
    assert rows[0] == ["width", "w_r", "w_c", "sym_L_total", "hyper_L_total", "gap"]
    assert len(rows) == 6
    assert run(out, "sweep-size", "--widths", "4.5").exit_code == 2


def test_ccam_probe(tmp_path, run):
    out = tmp_path / "out"
    result = run(out, "ccam-probe")
    assert result.exit_code == 0, result.output
    table = read_rows(out / "attention_table.csv")
    assert table[0] == ["s_1", "s_2", "M_1", "M_2", "M_3", "M_4"]
    checks = read_rows(out / "gradient_checks.csv")
    assert all(row[-1] == "True" for row in checks[1:])


def test_seed_flag_changes_output(tmp_path, run, config_file):
    runner = CliRunner()
    for name, seed in (("a", "1"), ("b", "2")):
        args = ["--config", config_file, "--seed", seed, "--out", str(tmp_path / name), "generate-data"]
        assert runner.invoke(cli, args).exit_code == 0
    assert read_bytes(tmp_path / "a" / "train.csv") != read_bytes(tmp_path / "b" / "train.csv")
