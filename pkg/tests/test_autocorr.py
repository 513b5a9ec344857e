import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.autograd.tensor_core import Tensor
from src.errors import ConfigError, ShapeError
from src.models.auto_correlation import (AutoCorrelationLayer, DelayFreezer, DelaySelection, MechanismKind,
                                         autocorrelation_speedup, autocorrelation_standard, frozen_delays,
                                         full_attention, rank_lags, resize_kv, select_topk_delays,
                                         time_delay_aggregate, topk_count)
from src.processors.series_ops import CorrelationProfile, autocorr_fft, roll


def _replicated(series, heads, width):
    """(1, L, heads, width) tensor whose every channel is `series`"""
    return np.tile(np.asarray(series).reshape(1, -1, 1, 1), (1, 1, heads, width))


class TestTopK:

    @pytest.mark.parametrize('factor,length,expected', [(1.0, 96, 4), (2.0, 96, 9), (3.0, 24, 9), (1.0, 3, 1)])
    def test_count(self, factor, length, expected):
        assert topk_count(factor, length) == expected

    def test_count_below_one_is_an_error(self):
        with pytest.raises(ConfigError):
            topk_count(0.1, 8)

    def test_clamped_count_for_single_step(self):
        assert topk_count(1.0, 1, clamp=True) == 1

    def test_ties_prefer_smaller_lag(self):
        values = np.array([1.0, 0.5, 0.5 + 1e-13, 0.2, 0.5])
        assert_array_equal(rank_lags(values), [0, 1, 2, 4, 3])

    def test_selection_weights_are_softmax_of_top_values(self):
        values = np.array([0.1, 0.9, 0.3, 0.7, 0.2, 0.0, 0.05, 0.6])
        selection = select_topk_delays(CorrelationProfile(values, 8), factor=1.0)
        assert selection.k == 2
        assert selection.delays == [1, 3]
        expected = np.exp([0.9, 0.7]) / np.exp([0.9, 0.7]).sum()
        assert_allclose(selection.weights, expected)

    @pytest.mark.parametrize('period', [8, 12, 24])
    def test_noiseless_period_is_first_nonzero_delay(self, period):
        t = np.arange(8 * period, dtype=np.float64)
        x = np.sin(2 * np.pi * t / period)
        selection = select_topk_delays(autocorr_fft(x, x), factor=1.0)
        assert [d for d in selection.delays if d != 0][0] == period

    def test_length_must_match_profile(self):
        with pytest.raises(ShapeError):
            select_topk_delays(CorrelationProfile(np.zeros(8), 8), 1.0, length=9)

    def test_duplicate_delays_rejected(self):
        with pytest.raises(ShapeError):
            DelaySelection(delays=[1, 1], weights=[0.5, 0.5])

    @pytest.mark.parametrize('delays,weights', [
        ([-1, 2], [0.5, 0.5]),
        ([0, 2], [0.5, 0.6]),
        ([0, 2], [1.5, -0.5]),
    ])
    def test_invalid_selection_rejected(self, delays, weights):
        with pytest.raises(ShapeError):
            DelaySelection(delays=delays, weights=weights)


class TestAggregation:

    def test_single_delay_is_a_roll(self, rng):
        v = rng.standard_normal((10, 3))
        out = time_delay_aggregate(v, DelaySelection([3], [1.0]))
        assert_allclose(out.data, roll(v, 3).data)

    def test_weighted_sum_of_rolls(self, rng):
        v = rng.standard_normal(6)
        out = time_delay_aggregate(v, DelaySelection([0, 2], [0.25, 0.75]))
        assert_allclose(out.data, 0.25 * v + 0.75 * np.roll(v, -2))

    def test_linear_in_values(self, rng):
        v1, v2 = rng.standard_normal((12, 3)), rng.standard_normal((12, 3))
        selection = DelaySelection([0, 4, 7], [0.2, 0.5, 0.3])
        combined = time_delay_aggregate(2.5 * v1 - 0.75 * v2, selection).data
        separate = 2.5 * time_delay_aggregate(v1, selection).data - 0.75 * time_delay_aggregate(v2, selection).data
        assert_allclose(combined, separate, rtol=0, atol=1e-10)

    def test_delay_beyond_length_rejected(self, rng):
        with pytest.raises(ShapeError):
            time_delay_aggregate(rng.standard_normal(4), DelaySelection([4], [1.0]))

    def test_resize_truncates_and_zero_fills(self):
        x = np.arange(5.0).reshape(5, 1)
        assert_array_equal(resize_kv(x, 3).data, [[0.0], [1.0], [2.0]])
        assert_array_equal(resize_kv(x, 7).data[:, 0], [0, 1, 2, 3, 4, 0, 0])


class TestMechanisms:

    def test_standard_matches_speedup_on_replicated_channels(self, rng):
        base_q, base_k = rng.standard_normal(24), rng.standard_normal(24)
        q, k = _replicated(base_q, 2, 3), _replicated(base_k, 2, 3)
        v = rng.standard_normal((1, 24, 2, 3))
        assert_allclose(autocorrelation_standard(q, k, v, 1.0).data,
                        autocorrelation_speedup(q, k, v, 1.0, phase='infer').data, atol=1e-9)

    def test_speedup_phases_agree(self, rng):
        q, k, v = (rng.standard_normal((2, 20, 2, 4)) for _ in range(3))
        assert_allclose(autocorrelation_speedup(q, k, v, 2.0, phase='train').data,
                        autocorrelation_speedup(q, k, v, 2.0, phase='infer').data, atol=1e-12)

    def test_unknown_phase_rejected(self, rng):
        q = rng.standard_normal((1, 8, 1, 2))
        with pytest.raises(ConfigError):
            autocorrelation_speedup(q, q, q, 1.0, phase='eval')

    def test_full_attention_matches_direct_softmax(self, rng):
        q, k, v = (rng.standard_normal((1, 6, 1, 4)) for _ in range(3))
        scores = q[0, :, 0] @ k[0, :, 0].T / 2.0
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        assert_allclose(full_attention(q, k, v).data[0, :, 0], weights @ v[0, :, 0])

    def test_unbatched_input(self, rng):
        q = rng.standard_normal((16, 2, 4))
        assert autocorrelation_standard(q, q, q, 1.0).shape == (16, 2, 4)
        assert full_attention(q, q, q).shape == (16, 2, 4)

    def test_single_step_series_uses_lag_zero(self, rng):
        v = rng.standard_normal((1, 1, 1, 3))
        assert_allclose(autocorrelation_speedup(v, v, v, 1.0).data, v)

    def test_mismatched_shapes_rejected(self, rng):
        q = rng.standard_normal((1, 8, 1, 2))
        with pytest.raises(ShapeError):
            autocorrelation_standard(q, q[:, :6], q[:, :6], 1.0)


class TestDelayFreezer:

    def test_replay_reuses_recorded_delays(self, rng):
        q, k, v = (rng.standard_normal((1, 16, 1, 2)) for _ in range(3))
        freezer = DelayFreezer()
        with frozen_delays(freezer):
            first = autocorrelation_speedup(q, k, v, 1.0).data
            freezer.replay()
            replayed = autocorrelation_speedup(q, k, v, 1.0).data
            freezer.replay()
            other = rng.standard_normal((1, 16, 1, 2))
            autocorrelation_speedup(other, other, v, 1.0)
        assert_array_equal(first, replayed)
        assert len(freezer.records) == 1

    def test_replay_past_records_is_an_error(self, rng):
        q = rng.standard_normal((1, 8, 1, 2))
        freezer = DelayFreezer()
        freezer.replay()
        with frozen_delays(freezer), pytest.raises(ShapeError):
            autocorrelation_speedup(q, q, q, 1.0)


class TestAutoCorrelationLayer:

    @pytest.mark.parametrize('mechanism', [kind.value for kind in MechanismKind])
    def test_output_shape_with_cross_input(self, rng, mechanism):
        layer = AutoCorrelationLayer(8, 2, 1.0, mechanism, rng)
        x = Tensor(rng.standard_normal((2, 12, 8)))
        assert layer(x).shape == (2, 12, 8)
        assert layer(x, cross=rng.standard_normal((2, 20, 8))).shape == (2, 12, 8)
        assert layer(x, cross=rng.standard_normal((2, 5, 8)), training=True).shape == (2, 12, 8)

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ConfigError):
            AutoCorrelationLayer(10, 3, 1.0, 'autocorr_standard', rng)

    def test_unknown_mechanism(self, rng):
        with pytest.raises(ConfigError, match='autocorr_speedup'):
            AutoCorrelationLayer(8, 2, 1.0, 'sparse', rng)

    def test_parameters_are_named(self, rng):
        layer = AutoCorrelationLayer(8, 2, 1.0, 'autocorr_speedup', rng)
        names = set(layer.named_parameters())
        assert 'query_projection.weight' in names and 'out_projection.bias' in names
        assert layer.parameter_count() == 4 * (8 * 8 + 8)
