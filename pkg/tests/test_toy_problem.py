import numpy as np
import pytest

from sym_errors import DimensionError, EvaluationError, UsageError
from sym_parameter import SymParameter, combine_losses
from tensor_core import Tensor
from toy_problem import (CLASSIFICATION, REGRESSION, EvaluationReport, ReportRow, ToyModel, build_model, class_label,
                         compare_reports, evaluate_grid, g, h, interpolation_bound_ok, labels_consistent,
                         make_dataset, max_gap, monotonicity_ok, output_sensitivity, to_training_data,
                         toy_objective)


def report(rows, **metadata):
    return EvaluationReport([ReportRow(w, w[0] * l_r + w[1] * l_c, l_r, l_c) for w, l_r, l_c in rows], metadata)


GRID_WEIGHTS = [(1.0, 0.0), (0.75, 0.25), (0.5, 0.5), (0.25, 0.75), (0.0, 1.0)]


class TestTargets:
    def test_g_examples(self):
        assert g(0.0) == 0.5
        assert g(0.8) == 0.5
        assert g(1.0) == pytest.approx(0.88, abs=1e-12)
        assert g(0.5) == pytest.approx(0.29, abs=1e-12)

    def test_h_examples(self):
        assert h(0.0) == 0.5
        assert h(1.0) == pytest.approx(0.4, abs=1e-12)
        assert h(-1.0) == pytest.approx(0.6, abs=1e-12)

    def test_labels(self):
        assert class_label(0.0) == 0.0
        assert class_label(0.5) == 1.0
        np.testing.assert_array_equal(class_label(np.array([0.0, 0.5])), [0.0, 1.0])


class TestDataset:
    def test_grid_sampling(self):
        samples = make_dataset(4, "uniform_grid")
        np.testing.assert_allclose([s.x for s in samples], [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], atol=1e-15)

    def test_random_sampling_stays_in_range(self):
        samples = make_dataset(500, "uniform_random", seed=11)
        xs = np.array([s.x for s in samples])
        assert xs.min() >= -1.0 and xs.max() <= 1.0
        assert labels_consistent(samples)

    def test_same_seed_same_samples(self):
        assert make_dataset(20, seed=5) == make_dataset(20, seed=5)
        assert make_dataset(20, seed=5) != make_dataset(20, seed=6)

    def test_train_and_eval_splits_differ(self):
        assert make_dataset(20, seed=5, split="train") != make_dataset(20, seed=5, split="eval")

    def test_tie_is_labelled_zero(self):
        samples = make_dataset(3, "uniform_grid")
        assert samples[1].x == 0.0
        assert samples[1].y_c == 0.0

    @pytest.mark.parametrize("kwargs", [{"n": 1}, {"n": 0}, {"n": 10, "sampling": "sobol"},
                                        {"n": 10, "split": "test"}])
    def test_invalid_requests(self, kwargs):
        with pytest.raises(UsageError):
            make_dataset(**kwargs)

    def test_tampered_labels_are_detected(self):
        samples = make_dataset(10, seed=1)
        first = samples[0]
        samples[0] = type(first)(first.x, first.y_r, 1.0 - first.y_c)
        assert not labels_consistent(samples)

    def test_training_data_shapes(self):
        data = to_training_data(make_dataset(6, seed=2))
        assert data.inputs.shape == (6, 1)
        assert data.targets[REGRESSION].shape == (6, 1)
        assert data.targets[CLASSIFICATION].shape == (6, 1)


class TestObjective:
    def setup_method(self):
        self.data = to_training_data(make_dataset(16, seed=4))
        self.targets = {name: Tensor(values) for name, values in self.data.targets.items()}

    def test_perfect_regression(self):
        outputs = Tensor(self.data.targets[REGRESSION])
        assert combine_losses(toy_objective(), SymParameter((1.0, 0.0)), outputs, self.targets).item() == 0.0

    def test_uninformed_classifier(self):
        outputs = Tensor(np.full((16, 1), 0.5))
        total = combine_losses(toy_objective(), SymParameter((0.0, 1.0)), outputs, self.targets).item()
        assert total == pytest.approx(0.2 * np.log(2.0), abs=1e-12)

    def test_bce_scale_is_configurable(self):
        outputs = Tensor(np.full((16, 1), 0.5))
        total = combine_losses(toy_objective(bce_scale=1.0), SymParameter((0.0, 1.0)), outputs, self.targets)
        assert total.item() == pytest.approx(np.log(2.0), abs=1e-12)


class TestModel:
    def test_input_dimension_follows_mode(self):
        assert build_model("sym", 0, width=8).layer_sizes == [3, 8, 8, 8, 1]
        assert build_model("s_in", 0, width=8).layer_sizes == [3, 8, 8, 8, 1]
        assert build_model("hyper", 0, width=8).layer_sizes == [1, 8, 8, 8, 1]

    def test_initialization_bounds(self):
        model = build_model("sym", 0, width=16)
        for name, tensor in model.parameters().items():
            fan_in = model.parameter_shapes()[name.replace("bias", "weight")][0]
            assert np.abs(tensor.data).max() <= 1.0 / np.sqrt(fan_in)

    def test_same_seed_same_initialization(self):
        a, b = build_model("sym", 3, width=8), build_model("sym", 3, width=8)
        for name in a.parameters():
            np.testing.assert_array_equal(a.parameters()[name].data, b.parameters()[name].data)

    def test_missing_sym_input(self):
        with pytest.raises(UsageError):
            build_model("sym", 0, width=8).forward(np.zeros((2, 1)), None)

    def test_wrong_sym_shape(self):
        with pytest.raises(DimensionError):
            build_model("sym", 0, width=8).forward(np.zeros((2, 1)), np.full((2, 3), 1.0 / 3.0))

    def test_wrong_parameter_shapes(self):
        model = build_model("sym", 0, width=8)
        params = dict(model.parameters())
        params["fc0.weight"] = Tensor(np.zeros((2, 8)))
        with pytest.raises(DimensionError):
            ToyModel("sym", 2, 8, 3, params)

    def test_predict_ignores_s_for_hyper(self):
        model = build_model("hyper", 0, width=8, fixed_weights=(1.0, 0.0))
        x = np.linspace(-1, 1, 5)
        np.testing.assert_array_equal(model.predict(x, SymParameter((1.0, 0.0))),
                                      model.predict(x, SymParameter((0.0, 1.0))))
        assert output_sensitivity(model, make_dataset(5, "uniform_grid")) == 0.0


class TestEvaluateGrid:
    def test_totals_match_weighted_terms(self):
        report_ = evaluate_grid(build_model("sym", 0, width=8), make_dataset(32, seed=1))
        assert [row.weights for row in report_.rows] == GRID_WEIGHTS
        for row in report_.rows:
            assert abs(row.total - (row.weights[0] * row.l_r + row.weights[1] * row.l_c)) < 1e-9
        assert report_.row_for((1.0, 0.0)).total == report_.row_for((1.0, 0.0)).l_r
        assert report_.row_for((0.0, 1.0)).total == report_.row_for((0.0, 1.0)).l_c
        assert report_.metadata["l_c_scaled"] is True
        assert report_.metadata["mode"] == "sym"

    def test_hyper_model_is_measured_once(self):
        model = build_model("hyper", 0, width=8, fixed_weights=(0.5, 0.5))
        report_ = evaluate_grid(model, make_dataset(32, seed=1))
        assert len(set(report_.column("l_r"))) == 1
        assert len(set(report_.column("l_c"))) == 1
        assert report_.metadata["fixed_weights"] == [0.5, 0.5]

    def test_non_finite_parameters(self):
        model = build_model("sym", 0, width=8)
        model.parameters()["fc0.bias"].assign(np.full(8, np.nan))
        with pytest.raises(EvaluationError):
            evaluate_grid(model, make_dataset(8, seed=1))

    def test_grid_rows_must_match_objective(self):
        with pytest.raises(UsageError):
            evaluate_grid(build_model("sym", 0, width=8), make_dataset(8, seed=1),
                          [SymParameter((0.2, 0.3, 0.5))])


class TestReportChecks:
    def test_monotone_report(self):
        rows = [(w, l_r, l_c) for w, l_r, l_c in zip(GRID_WEIGHTS, [0.0001, 0.0063, 0.0347, 0.1674, 0.4113],
                                                     [0.2148, 0.1500, 0.1302, 0.0613, 0.0062])]
        assert monotonicity_ok(report(rows))
        assert interpolation_bound_ok(report(rows))

    def test_non_monotone_report(self):
        rows = [(w, l_r, 0.1) for w, l_r in zip(GRID_WEIGHTS, [0.1, 0.05, 0.2, 0.3, 0.4])]
        assert not monotonicity_ok(report(rows))
        assert monotonicity_ok(report(rows), slack=0.06)

    def test_interpolation_bound_violation(self):
        rows = [(GRID_WEIGHTS[0], 0.0, 0.5), (GRID_WEIGHTS[2], 0.5, 0.5), (GRID_WEIGHTS[4], 0.5, 0.0)]
        assert not interpolation_bound_ok(report(rows))

    def test_interpolation_needs_one_hot_rows(self):
        with pytest.raises(UsageError):
            interpolation_bound_ok(report([(GRID_WEIGHTS[2], 0.1, 0.1)]))

    def test_comparison_pairs_rows_by_fixed_weights(self):
        sym = report([(w, 0.1, 0.1) for w in GRID_WEIGHTS])
        hyper = [report([(w, 0.1, 0.3) for w in GRID_WEIGHTS], fixed_weights=[1.0, 0.0]),
                 report([(w, 0.2, 0.1) for w in GRID_WEIGHTS], fixed_weights=[0.0, 1.0])]
        rows = compare_reports(sym, hyper)
        assert len(rows) == 5
        assert rows[0].gap == pytest.approx(0.0)
        assert rows[2].hyper is None and rows[2].gap is None
        assert rows[4].gap == pytest.approx(0.0)
        assert max_gap(rows) == pytest.approx(0.0)

    def test_comparison_needs_fixed_weights(self):
        with pytest.raises(UsageError):
            compare_reports(report([(GRID_WEIGHTS[0], 0.1, 0.1)]), [report([(GRID_WEIGHTS[0], 0.1, 0.1)])])
