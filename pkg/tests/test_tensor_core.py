import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.autograd import tensor_core as tc
from src.autograd.finite_difference import finite_difference_gradient, numeric_partial, relative_error
from src.autograd.tensor_core import GradientTape, Tensor, parameter, reverse_mode_gradient
from src.errors import ConfigError, NumericError, ShapeError


def _check_gradients(loss_fn, params, atol=1e-6):
    with GradientTape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)
    numeric = finite_difference_gradient(lambda: loss_fn().item(), params, eps=1e-5)
    for name in params:
        assert_allclose(analytic[name], numeric[name], rtol=1e-6, atol=atol)


class TestTensorBasics:

    def test_float_input_is_cast_to_float64(self):
        assert Tensor([1, 2, 3]).data.dtype == np.float64

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])

    def test_non_finite_result_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1e308]) * Tensor([1e308])

    def test_item_needs_single_element(self):
        assert Tensor([[3.5]]).item() == 3.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_fft_output_is_complex_tensor(self):
        spectrum = tc.fft(Tensor([1.0, 2.0, 3.0]))
        assert isinstance(spectrum, tc.ComplexTensor)
        assert_allclose(spectrum.real_part, np.fft.fft([1.0, 2.0, 3.0]).real)
        assert_allclose(spectrum.imag_part, np.fft.fft([1.0, 2.0, 3.0]).imag)


class TestTape:

    def test_nothing_recorded_without_tape(self):
        x = parameter([1.0, 2.0])
        with GradientTape() as tape:
            pass
        _ = (x * 2.0).sum()
        assert len(tape) == 0

    def test_innermost_tape_records(self):
        x = parameter([1.0, 2.0])
        with GradientTape() as outer:
            with GradientTape() as inner:
                _ = x * 2.0
        assert len(inner) == 1
        assert len(outer) == 0

    def test_operations_listed_in_order(self):
        x = parameter([1.0, 2.0])
        with GradientTape() as tape:
            _ = (x * 3.0).sum()
        assert tape.operations == ['mul', 'sum']

    def test_non_scalar_output_rejected(self):
        x = parameter([1.0, 2.0])
        with GradientTape() as tape:
            y = x * 2.0
        with pytest.raises(ShapeError):
            reverse_mode_gradient(y, tape)

    def test_broadcast_add_gradient(self):
        a = parameter(np.ones((2, 3)))
        b = parameter(np.ones(3))
        with GradientTape() as tape:
            loss = (a + b).sum()
        grads = tape.gradient(loss, {'a': a, 'b': b})
        assert_array_equal(grads['a'], np.ones((2, 3)))
        assert_array_equal(grads['b'], [2.0, 2.0, 2.0])

    def test_sequence_params_keyed_by_tensor(self):
        a = parameter([2.0])
        with GradientTape() as tape:
            loss = (a * a).sum()
        grads = tape.gradient(loss, [a])
        assert_allclose(grads[a], [4.0])

    def test_unreached_parameter_gets_zeros(self):
        a, b = parameter([1.0, 2.0]), parameter([[5.0]])
        with GradientTape() as tape:
            loss = (a * 2.0).sum()
        grads = tape.gradient(loss, {'a': a, 'b': b})
        assert_array_equal(grads['b'], np.zeros((1, 1)))

    def test_reused_tensor_accumulates(self):
        x = parameter([3.0])
        with GradientTape() as tape:
            loss = (x * x + x).sum()
        assert_allclose(tape.gradient(loss, {'x': x})['x'], [7.0])


class TestGradients:

    def test_elementwise_and_division(self, rng):
        a = parameter(rng.standard_normal((3, 4)))
        b = parameter(rng.uniform(1.0, 2.0, (3, 4)))
        _check_gradients(lambda: ((a * b - a / b) ** 2).mean(), {'a': a, 'b': b})

    def test_batched_matmul(self, rng):
        a = parameter(rng.standard_normal((2, 3, 4)))
        w = parameter(rng.standard_normal((4, 5)))
        target = rng.standard_normal((2, 3, 5))
        _check_gradients(lambda: ((a @ w - target) ** 2).sum(), {'a': a, 'w': w})

    def test_softmax_and_exp(self, rng):
        x = parameter(rng.standard_normal((3, 5)))
        weights = Tensor(rng.standard_normal((3, 5)))
        _check_gradients(lambda: (tc.softmax(x, axis=1) * weights + x.exp() * 0.1).sum(), {'x': x})

    def test_transforms(self, rng):
        x = parameter(rng.standard_normal(9))
        weights = Tensor(rng.standard_normal(9))

        def power_spectrum_loss():
            spectrum = tc.fft(x)
            return ((spectrum * tc.conj(spectrum)).real * weights).sum()

        _check_gradients(power_spectrum_loss, {'x': x}, atol=1e-6)

    def test_inverse_transform_round_trip(self, rng):
        x = rng.standard_normal(11)
        assert_allclose(tc.ifft(tc.fft(Tensor(x))).real.data, x, atol=1e-12)

    def test_gather_and_structure(self, rng):
        x = parameter(rng.standard_normal((4, 6)))
        weights = Tensor(rng.standard_normal((4, 5)))
        index = np.array([[0, 0, 5, 2, 1]] * 4)

        def loss():
            gathered = tc.take_along_axis(x, index, axis=1)
            rolled = tc.roll(x, 2, axis=1)[:, 1:]
            stacked = tc.concat([gathered, rolled], axis=0)
            return (stacked[:4] * weights).sum() + tc.take(x, np.array([1, 1]), axis=0).sum() \
                + x.transpose(1, 0).reshape(24).relu().sum()

        _check_gradients(loss, {'x': x})

    def test_duplicate_gather_indices_accumulate(self):
        x = parameter([1.0, 2.0, 3.0])
        with GradientTape() as tape:
            loss = tc.take(x, np.array([0, 0, 2]), axis=0).sum()
        assert_array_equal(tape.gradient(loss, {'x': x})['x'], [2.0, 0.0, 1.0])


class TestTransformValues:

    def test_impulse_has_flat_spectrum(self):
        assert_allclose(tc.fft_real(Tensor([1.0, 0.0, 0.0, 0.0])).data, np.ones(4), atol=1e-15)

    def test_constant_maps_to_dc_bin(self):
        assert_allclose(tc.fft_real(Tensor(np.ones(4))).data, [4.0, 0.0, 0.0, 0.0], atol=1e-15)
        assert_allclose(tc.ifft(Tensor(np.array([4.0, 0.0, 0.0, 0.0], dtype=np.complex128))).data,
                        np.ones(4), atol=1e-15)

    def test_zero_input(self):
        assert_array_equal(tc.fft_real(Tensor(np.zeros(5))).data, np.zeros(5))

    def test_round_trip_over_lengths(self, rng):
        for _ in range(200):
            length = int(rng.integers(1, 65))
            x = rng.standard_normal(length)
            back = tc.ifft(tc.fft_real(Tensor(x))).data
            assert np.max(np.abs(back.real - x)) <= 1e-10
            assert np.max(np.abs(back.imag)) <= 1e-10

    @pytest.mark.parametrize('length', [1, 7, 16, 97])
    def test_parseval(self, rng, length):
        x = rng.standard_normal(length)
        spectrum = tc.fft_real(Tensor(x)).data
        assert np.sum(np.abs(spectrum) ** 2) / length == pytest.approx(np.sum(x ** 2), rel=1e-9)


class TestSoftmaxValues:

    def test_equal_large_inputs(self):
        assert_allclose(tc.softmax(Tensor([1000.0, 1000.0, 1000.0])).data, np.full(3, 1 / 3))

    def test_log_inputs_give_proportional_weights(self):
        assert_allclose(tc.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data, [1 / 6, 2 / 6, 3 / 6])

    def test_sums_to_one_for_large_magnitudes(self, rng):
        for scale in (1.0, 1e3, 1e6):
            out = tc.softmax(Tensor(rng.uniform(-scale, scale, size=(20, 9))), axis=1).data
            assert np.all(out >= 0)
            assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-9

    def test_monotone(self):
        out = tc.softmax(Tensor([0.5, -2.0, 3.0, 0.0])).data
        assert list(np.argsort(out)) == [1, 3, 0, 2]


class TestFreeFunctions:

    def test_roll_follows_numpy(self):
        assert_array_equal(tc.roll(Tensor([0.0, 1.0, 2.0, 3.0]), 1, axis=0).data, [3.0, 0.0, 1.0, 2.0])

    def test_softmax_empty_rejected(self):
        with pytest.raises(ShapeError):
            tc.softmax(Tensor(np.zeros(0)))

    def test_softmax_sums_to_one(self, rng):
        assert_allclose(tc.softmax(Tensor(rng.standard_normal((2, 7))), axis=1).data.sum(axis=1), [1.0, 1.0])

    def test_transform_length_must_match(self):
        with pytest.raises(ShapeError):
            tc.fft(Tensor([1.0, 2.0]), length=3)

    def test_dropout_identity_outside_training(self, rng):
        x = Tensor(rng.standard_normal(10))
        assert tc.dropout(x, 0.5, rng, training=False) is x

    def test_dropout_scales_kept_values(self):
        x = Tensor(np.ones(1000))
        out = tc.dropout(x, 0.5, np.random.Generator(np.random.PCG64(1)), training=True).data
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert 0 < np.count_nonzero(out) < 1000


class TestFiniteDifference:

    def test_numeric_partial_restores_value(self):
        x = parameter([1.0, 2.0])
        partial = numeric_partial(lambda: float((x.data ** 2).sum()), x, 1, eps=1e-4)
        assert partial == pytest.approx(4.0, rel=1e-8)
        assert_array_equal(x.data, [1.0, 2.0])

    def test_numeric_partial_rejects_bad_step(self):
        x = parameter([1.0])
        with pytest.raises(ConfigError):
            numeric_partial(lambda: 0.0, x, 0, eps=0.0)

    def test_sampled_coordinates_leave_others_unset(self):
        x = parameter([1.0, 2.0, 3.0])
        grads = finite_difference_gradient(lambda: float(x.data.sum()), {'x': x}, coordinates=[('x', 1)])
        assert np.isnan(grads['x'][0]) and np.isnan(grads['x'][2])
        assert grads['x'][1] == pytest.approx(1.0)

    def test_relative_error_floor(self):
        assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)
