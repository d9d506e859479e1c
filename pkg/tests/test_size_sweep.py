import pytest

from size_sweep import WidthResult, gap_trend_ok, size_sweep
from sym_errors import UsageError
from sym_parameter import SymParameter
from toy_problem import (ComparisonRow, EvaluationReport, ReportRow, evaluate_grid, make_dataset, to_training_data,
                         train_toy_model)

GRID = [SymParameter((1.0, 0.0)), SymParameter((0.0, 1.0))]


@pytest.fixture
def eval_data():
    return to_training_data(make_dataset(16, seed=3, split="eval"))


def result_with_gap(width, gap):
    row = ReportRow((1.0, 0.0), gap, gap, 0.0)
    zero = ReportRow((1.0, 0.0), 0.0, 0.0, 0.0)
    return WidthResult(width, EvaluationReport([row]), [], [ComparisonRow((1.0, 0.0), row, zero)])


@pytest.mark.parametrize("widths", [[], [0], [8, -1], [True]])
def test_invalid_widths(widths, tiny_config, toy_data, eval_data):
    with pytest.raises(UsageError):
        size_sweep(widths, tiny_config, toy_data, eval_data)


def test_sweep_trains_sym_and_hyper_models_per_width(tiny_config, toy_data, eval_data):
    results = size_sweep([4, 8], tiny_config, toy_data, eval_data, weight_grid=GRID)
    assert [result.width for result in results] == [4, 8]
    for result in results:
        assert len(result.hyper_reports) == len(GRID)
        assert [r.metadata["fixed_weights"] for r in result.hyper_reports] == [[1.0, 0.0], [0.0, 1.0]]
        assert all(row.hyper is not None for row in result.comparison)
        assert result.max_gap >= 0.0


def test_sweep_width_reproduces_standalone_run(tiny_config, toy_data, eval_data):
    result = size_sweep([8], tiny_config, toy_data, eval_data, weight_grid=GRID)[0]
    model, _ = train_toy_model(tiny_config, toy_data, width=8)
    standalone = evaluate_grid(model, eval_data, GRID)
    assert result.sym_report.rows == standalone.rows


def test_gap_trend():
    assert gap_trend_ok([result_with_gap(64, 0.01), result_with_gap(8, 0.1), result_with_gap(16, 0.05)])
    assert not gap_trend_ok([result_with_gap(8, 0.01), result_with_gap(16, 0.05)])
