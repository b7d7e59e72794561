import numpy as np
import pytest

from errors import DimensionError, NonFiniteError
from tensor_core import (
    GradTape, Tensor, active_tape, atan2, concat, crop, default_dtype, hypot, precision, split_channels, sqrt,
)


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_precision_context_switches_and_restores(self):
        with precision('float64'):
            assert default_dtype() == np.float64
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_non_finite_result_is_rejected(self):
        with pytest.raises(NonFiniteError, match='div'):
            Tensor([1.0]) / Tensor([0.0])


class TestGradTape:
    def test_no_tape_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * x
        assert active_tape() is None
        assert y.requires_grad

    def test_reused_input_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        with GradTape() as tape:
            y = x * x + x
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_broadcast_gradient_is_reduced(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        with GradTape() as tape:
            y = (x + b).sum()
        tape.backward(y)
        assert b.grad.shape == (1, 3)
        np.testing.assert_allclose(b.grad, [[2.0, 2.0, 2.0]])

    def test_constant_inputs_are_not_recorded(self):
        with GradTape() as tape:
            Tensor([1.0]) + Tensor([2.0])
        assert len(tape) == 0

    def test_nested_tapes_restore_outer(self):
        with GradTape() as outer:
            with GradTape() as inner:
                assert active_tape() is inner
            assert active_tape() is outer
        assert active_tape() is None


class TestOps:
    def test_sqrt_gradient_is_zero_at_zero(self):
        x = Tensor([0.0, 4.0], requires_grad=True)
        with GradTape() as tape:
            y = sqrt(x).sum()
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [0.0, 0.25])

    def test_hypot_and_atan2_at_origin(self):
        a = Tensor([0.0], requires_grad=True)
        b = Tensor([0.0], requires_grad=True)
        with GradTape() as tape:
            y = (hypot(a, b) + atan2(b, a)).sum()
        tape.backward(y)
        assert a.grad[0] == 0.0 and b.grad[0] == 0.0

    def test_atan2_range_excludes_minus_pi(self):
        out = atan2(Tensor([-0.0]), Tensor([-1.0]))
        assert out.data[0] == pytest.approx(np.pi)

    def test_concat_and_split_are_inverse(self, rng):
        a = Tensor(rng.standard_normal((1, 2, 3, 3)))
        b = Tensor(rng.standard_normal((1, 2, 3, 3)))
        first, second = split_channels(concat([a, b], axis=1), 2)
        np.testing.assert_array_equal(first.data, a.data)
        np.testing.assert_array_equal(second.data, b.data)

    def test_split_rejects_uneven_channels(self):
        with pytest.raises(DimensionError):
            split_channels(Tensor(np.zeros((1, 3, 2, 2))), 2)

    def test_crop_gradient_pads_with_zeros(self):
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        with GradTape() as tape:
            y = crop(x, 2, 3).sum()
        tape.backward(y)
        assert x.grad.sum() == 6.0
        assert x.grad[0, 0, 3, 3] == 0.0

    def test_forward_is_deterministic(self, rng):
        data = rng.standard_normal((2, 3, 5, 5))
        first = (Tensor(data) * Tensor(data)).sum().data
        second = (Tensor(data) * Tensor(data)).sum().data
        assert first.tobytes() == second.tobytes()
