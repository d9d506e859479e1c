import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ccam import CcamLayer, ccam_forward, ccam_sensitivity, concat_inject
from gradient_check import check_gradients
from sym_errors import DimensionError, UsageError
from sym_parameter import SymParameter
from tensor_core import Tensor, reduce_sum

S = SymParameter((0.2, 0.3, 0.5))


@pytest.fixture
def layer(rng):
    return CcamLayer.init(8, 3, 4, rng)


@pytest.fixture
def features(rng):
    return Tensor(rng.standard_normal((4, 4, 8)))


class TestLayer:
    @pytest.mark.parametrize("channels, reduction, hidden", [(8, 4, 2), (6, 4, 2), (2, 4, 1), (16, 1, 16)])
    def test_bottleneck(self, channels, reduction, hidden):
        layer = CcamLayer.init(channels, 2, reduction)
        assert layer.bottleneck == hidden
        assert layer.parameters()["squeeze.weight"].shape == (2 * channels, hidden)
        assert layer.parameters()["excite.weight"].shape == (hidden, channels)
        assert layer.parameters()["embed.weight"].shape == (2, channels)

    def test_rejects_wrong_parameter_shapes(self, layer):
        params = dict(layer.parameters())
        params["embed.weight"] = Tensor(np.zeros((2, 8)))
        with pytest.raises(DimensionError):
            CcamLayer(8, 3, 4, params)

    def test_rejects_bad_sizes(self):
        with pytest.raises(UsageError):
            CcamLayer.init(0, 3)


class TestForward:
    def test_zeroed_excitation_halves_features(self, layer, features):
        layer.zero_parameters("excite")
        y, m = ccam_forward(layer, features, S)
        assert_array_equal(m.vector(), np.full(8, 0.5))
        assert_array_equal(y.data, 0.5 * features.data)

    def test_gating_is_per_channel(self, layer, features):
        y, m = ccam_forward(layer, features, S)
        gates = m.vector()
        assert m.values.shape == (1, 1, 8)
        for c in range(8):
            assert_array_equal(y.data[:, :, c], gates[c] * features.data[:, :, c])

    def test_gates_stay_inside_unit_interval(self, layer, features):
        y, m = ccam_forward(layer, features, S)
        assert np.all(m.values > 0.0) and np.all(m.values < 1.0)
        assert np.all(np.abs(y.data) <= np.abs(features.data))

    def test_saturated_gates_stay_below_one(self, layer, features):
        layer.zero_parameters("excite")
        bias = np.zeros(8)
        bias[0], bias[1] = 40.0, -800.0
        layer.parameters()["excite.bias"].assign(bias)
        _, m = ccam_forward(layer, features, S)
        assert 0.0 < m.vector()[1] < m.vector()[0] < 1.0

    def test_spatial_permutation_equivariance(self, rng, layer, features):
        order = rng.permutation(16)
        permuted = Tensor(features.data.reshape(16, 8)[order].reshape(4, 4, 8))
        y, m = ccam_forward(layer, features, S)
        y_perm, m_perm = ccam_forward(layer, permuted, S)
        assert_allclose(m_perm.values, m.values, rtol=0, atol=1e-14)
        assert_allclose(y_perm.data, y.data.reshape(16, 8)[order].reshape(4, 4, 8), rtol=0, atol=1e-14)

    def test_zero_features_give_zero_output(self, layer):
        for s in (S, SymParameter.one_hot(3, 0)):
            y, _ = ccam_forward(layer, Tensor(np.zeros((3, 3, 8))), s)
            assert_array_equal(y.data, np.zeros((3, 3, 8)))

    def test_batched_forward_matches_single_samples(self, rng, layer):
        x = rng.standard_normal((3, 4, 4, 8))
        s_rows = rng.dirichlet((1.0, 1.0, 1.0), size=3)
        y, m = ccam_forward(layer, Tensor(x), s_rows)
        assert y.shape == (3, 4, 4, 8)
        assert m.values.shape == (3, 1, 1, 8)
        for i in range(3):
            y_i, m_i = ccam_forward(layer, Tensor(x[i]), s_rows[i])
            assert_allclose(y.data[i], y_i.data, rtol=1e-12, atol=1e-14)
            assert_allclose(m.values[i], m_i.values, rtol=1e-12, atol=1e-14)

    def test_shared_s_for_a_batch(self, rng, layer):
        x = rng.standard_normal((2, 4, 4, 8))
        y, _ = ccam_forward(layer, Tensor(x), S)
        y_0, _ = ccam_forward(layer, Tensor(x[0]), S)
        assert_allclose(y.data[0], y_0.data, rtol=1e-12, atol=1e-14)

    def test_channel_mismatch(self, layer):
        with pytest.raises(UsageError):
            ccam_forward(layer, Tensor(np.zeros((4, 4, 6))), S)

    def test_sym_dimension_mismatch(self, layer, features):
        with pytest.raises(UsageError):
            ccam_forward(layer, features, SymParameter((0.5, 0.5)))

    def test_feature_rank(self, layer):
        with pytest.raises(UsageError):
            ccam_forward(layer, Tensor(np.zeros((4, 8))), S)

    def test_row_count_mismatch(self, layer):
        with pytest.raises(UsageError):
            ccam_forward(layer, Tensor(np.zeros((3, 2, 2, 8))), np.full((2, 3), 1.0 / 3.0))


class TestGradients:
    def test_sum_wrt_s(self, rng):
        layer = CcamLayer.init(8, 3, 4, rng)
        x = Tensor(rng.standard_normal((4, 4, 8)))
        s = Tensor(rng.dirichlet((1.0, 1.0, 1.0)))
        result = check_gradients(lambda: reduce_sum(ccam_forward(layer, x, s)[0]), {"S": s})
        assert result.passed, result.max_relative_error

    def test_wrt_features_and_parameters(self, rng):
        layer = CcamLayer.init(8, 3, 4, rng)
        x = Tensor(rng.standard_normal((4, 4, 8)))
        s = Tensor(rng.dirichlet((1.0, 1.0, 1.0)))
        fn = lambda: reduce_sum(ccam_forward(layer, x, s)[0])  # noqa: E731
        assert check_gradients(fn, {"X": x}).passed
        assert check_gradients(fn, layer.parameters()).passed

    def test_concat_inject_wrt_inputs(self, rng):
        x = Tensor(rng.standard_normal((3, 3, 4)))
        s = Tensor(rng.dirichlet((1.0, 1.0)))
        weights = Tensor(rng.uniform(-1.0, 1.0, (3, 3, 6)))
        result = check_gradients(lambda: reduce_sum(concat_inject(x, s) * weights), {"X": x, "S": s})
        assert result.passed


class TestConcatInject:
    def test_appends_constant_planes(self, features):
        out = concat_inject(features, S)
        assert out.shape == (4, 4, 11)
        assert_array_equal(out.data[:, :, :8], features.data)
        for j, value in enumerate(S.values):
            assert np.all(out.data[:, :, 8 + j] == value)

    def test_no_feature_channels(self):
        out = concat_inject(Tensor(np.zeros((1, 1, 0))), S)
        assert_array_equal(out.data, np.array(S.values).reshape(1, 1, 3))

    def test_batched(self, rng):
        x = rng.standard_normal((2, 3, 3, 4))
        s_rows = np.array([[1.0, 0.0], [0.25, 0.75]])
        out = concat_inject(Tensor(x), s_rows)
        assert out.shape == (2, 3, 3, 6)
        assert np.all(out.data[1, :, :, 5] == 0.75)

    def test_unbatched_features_take_one_s(self, features):
        with pytest.raises(UsageError):
            concat_inject(features, np.full((2, 3), 1.0 / 3.0))


class TestSensitivity:
    GRID = [SymParameter.one_hot(3, i) for i in range(3)] + [SymParameter((1 / 3, 1 / 3, 1 / 3))]

    def test_identical_s_gives_identical_rows(self, layer, features):
        table = ccam_sensitivity(layer, features, [S, S])
        assert_array_equal(table.maps[0], table.maps[1])
        assert table.spread == 0.0

    def test_severed_s_path(self, layer, features):
        layer.zero_parameters("embed")
        table = ccam_sensitivity(layer, features, self.GRID)
        for row in table.maps[1:]:
            assert_array_equal(row, table.maps[0])

    def test_table_shape_and_bounds(self, layer, features):
        table = ccam_sensitivity(layer, features, self.GRID)
        assert table.maps.shape == (4, 8)
        assert np.all(table.channel_min <= table.channel_max)
        assert table.spread >= 0.0

    def test_needs_a_single_feature_map(self, layer):
        with pytest.raises(UsageError):
            ccam_sensitivity(layer, Tensor(np.zeros((2, 4, 4, 8))), self.GRID)
