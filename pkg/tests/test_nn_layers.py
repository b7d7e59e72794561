import itertools

import numpy as np
import pytest

from errors import ArgumentError, DimensionError
from grad_check import grad_check
from nn_layers import (
    bilinear_resize, conv2d, gelu, layer_norm, pixel_shuffle, reflect_pad, simple_gate, softplus,
)
from tensor_core import Tensor, precision

from reference import space_to_depth

SEEDS = range(20)


def naive_conv(x, w, b, stride, padding):
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for b_idx, o, i, j in itertools.product(range(n), range(c_out), range(h_out), range(w_out)):
        patch = xp[b_idx, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
        out[b_idx, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_identity_pointwise_kernel(self, rng):
        x = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
        w = np.eye(3, dtype=np.float32)[:, :, None, None]
        out = conv2d(Tensor(x), Tensor(w))
        np.testing.assert_array_equal(out.data, x)

    def test_constant_field_with_ones_kernel(self):
        x = np.full((1, 1, 6, 6), 0.3, dtype=np.float32)
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), padding=1)
        np.testing.assert_allclose(out.data[0, 0, 1:-1, 1:-1], 2.7, rtol=1e-6)

    def test_matches_sliding_window_oracle(self, rng):
        x = rng.standard_normal((1, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1)
        assert np.max(np.abs(out.data - naive_conv(x, w, b, 1, 1))) < 1e-5

    @pytest.mark.parametrize('c_in,c_out,size,k,stride', [
        (c_in, c_out, size, k, stride)
        for c_in in (1, 4) for c_out in (1, 3) for size in (3, 5, 8) for k in (1, 3) for stride in (1, 2)
    ])
    def test_small_shape_sweep(self, c_in, c_out, size, k, stride):
        rng = np.random.default_rng(size * 100 + c_in * 10 + c_out)
        x = rng.standard_normal((2, c_in, size, size - 1 if size > 3 else size))
        w = rng.standard_normal((c_out, c_in, k, k))
        padding = k // 2
        with precision('float64'):
            out = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, naive_conv(x, w, None, stride, padding), atol=1e-10)

    def test_output_extent_formula(self):
        out = conv2d(Tensor(np.zeros((1, 2, 9, 7))), Tensor(np.zeros((5, 2, 3, 3))), stride=2, padding=1)
        assert out.shape == (1, 5, 5, 4)

    def test_rejects_bad_stride(self):
        with pytest.raises(ArgumentError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_rejects_even_kernel(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))

    @pytest.mark.parametrize('seed', SEEDS)
    def test_gradient(self, seed):
        error = grad_check(lambda x, weight, bias: conv2d(x, weight, bias, padding=1),
                           {'x': (1, 2, 5, 5), 'weight': (3, 2, 3, 3), 'bias': (3,)}, seed=seed)
        assert error < 1e-3

    def test_strided_gradient(self):
        grad_check(lambda x, weight: conv2d(x, weight, stride=2, padding=1),
                   {'x': (2, 2, 7, 6), 'weight': (2, 2, 3, 3)})


class TestLayerNorm:
    def test_channel_constant_input_gives_zero(self):
        x = np.broadcast_to(np.arange(9.0).reshape(1, 1, 3, 3), (1, 4, 3, 3))
        out = layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_affine_collapse(self, rng):
        out = layer_norm(Tensor(rng.standard_normal((1, 3, 4, 4))), Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)))
        np.testing.assert_array_equal(out.data, 5.0)

    def test_normalised_statistics(self, rng):
        out = layer_norm(Tensor(rng.standard_normal((1, 8, 4, 4))), Tensor(np.ones(8)), Tensor(np.zeros(8)))
        assert np.max(np.abs(out.data.mean(axis=1))) < 1e-5
        assert np.max(np.abs(out.data.var(axis=1) - 1.0)) < 1e-3

    def test_invariant_to_channel_constant_offset(self, rng):
        x = rng.standard_normal((1, 5, 4, 4))
        offset = rng.standard_normal((1, 1, 4, 4)) * 3.0
        gamma, beta = Tensor(np.ones(5)), Tensor(np.zeros(5))
        base = layer_norm(Tensor(x), gamma, beta).data
        shifted = layer_norm(Tensor(x + offset), gamma, beta).data
        assert np.max(np.abs(base - shifted)) < 1e-5

    def test_rejects_affine_mismatch(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    @pytest.mark.parametrize('seed', SEEDS)
    def test_gradient(self, seed):
        error = grad_check(lambda x, gamma, beta: layer_norm(x, gamma, beta),
                           {'x': (1, 4, 3, 3), 'gamma': (4,), 'beta': (4,)}, h=1e-5, seed=seed)
        assert error < 1e-3


class TestSimpleGate:
    def test_scalar_product(self):
        x = np.array([2.0, 3.0]).reshape(1, 2, 1, 1)
        assert simple_gate(Tensor(x)).data.item() == 6.0

    def test_half_split_convention(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        np.testing.assert_array_equal(simple_gate(Tensor(x)).data.ravel(), [3.0, 8.0])

    def test_zero_second_half_annihilates(self, rng):
        x = rng.standard_normal((1, 6, 3, 3))
        x[:, 3:] = 0.0
        np.testing.assert_array_equal(simple_gate(Tensor(x)).data, 0.0)

    def test_rejects_odd_channels(self):
        with pytest.raises(DimensionError):
            simple_gate(Tensor(np.zeros((1, 3, 2, 2))))

    @pytest.mark.parametrize('seed', SEEDS)
    def test_gradient(self, seed):
        assert grad_check(lambda x: simple_gate(x), {'x': (1, 6, 2, 2)}, seed=seed) < 1e-3


class TestPixelShuffle:
    def test_canonical_ordering(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        out = pixel_shuffle(Tensor(x), 2)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_factor_one_is_identity(self, rng):
        x = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(pixel_shuffle(Tensor(x), 1).data, x)

    def test_inverse_recovers_input(self, rng):
        x = rng.standard_normal((1, 8, 3, 3)).astype(np.float32)
        shuffled = pixel_shuffle(Tensor(x), 2)
        assert shuffled.shape == (1, 2, 6, 6)
        assert space_to_depth(shuffled.data, 2).tobytes() == x.tobytes()

    def test_rejects_indivisible_channels(self):
        with pytest.raises(DimensionError):
            pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)

    def test_gradient(self):
        assert grad_check(lambda x: pixel_shuffle(x, 2), {'x': (1, 8, 2, 3)}) < 1e-3


class TestBilinearResize:
    def test_constant_stays_constant(self):
        out = bilinear_resize(Tensor(np.full((1, 2, 5, 7), 0.4)), 9, 3)
        np.testing.assert_allclose(out.data, 0.4, rtol=1e-6)

    def test_single_pixel_upsample(self):
        out = bilinear_resize(Tensor(np.full((1, 1, 1, 1), 0.7)), 4, 4)
        np.testing.assert_allclose(out.data, 0.7, rtol=1e-6)

    def test_ramp_downsample_matches_formula(self):
        ramp = np.arange(16.0).reshape(1, 1, 4, 4)

        def sample(img, out_h, out_w):
            h, w = img.shape
            result = np.zeros((out_h, out_w))
            for i, j in itertools.product(range(out_h), range(out_w)):
                y = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
                x = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
                y0, x0 = int(np.floor(y)), int(np.floor(x))
                y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                dy, dx = y - y0, x - x0
                result[i, j] = ((1 - dy) * ((1 - dx) * img[y0, x0] + dx * img[y0, x1])
                                + dy * ((1 - dx) * img[y1, x0] + dx * img[y1, x1]))
            return result

        with precision('float64'):
            out = bilinear_resize(Tensor(ramp), 2, 2)
        np.testing.assert_allclose(out.data[0, 0], sample(ramp[0, 0], 2, 2), atol=1e-6)

    def test_rejects_empty_target(self):
        with pytest.raises(ArgumentError):
            bilinear_resize(Tensor(np.zeros((1, 1, 4, 4))), 0, 2)

    @pytest.mark.parametrize('out_h,out_w', [(2, 3), (7, 9), (4, 4)])
    def test_gradient(self, out_h, out_w):
        assert grad_check(lambda x: bilinear_resize(x, out_h, out_w), {'x': (1, 2, 4, 5)}) < 1e-3


class TestPaddingAndActivations:
    def test_reflect_pad_mirrors_without_edge_repeat(self):
        x = np.arange(4.0).reshape(1, 1, 1, 4)
        out = reflect_pad(Tensor(x), left=2, right=1)
        np.testing.assert_array_equal(out.data[0, 0, 0], [2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0])

    def test_reflect_pad_gradient(self):
        assert grad_check(lambda x: reflect_pad(x, 1, 2, 2, 1), {'x': (1, 2, 4, 5)}) < 1e-3

    def test_gelu_reference_values(self):
        out = gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
        np.testing.assert_allclose(out, [0.0, 0.8413447, -0.1586553], atol=1e-6)

    def test_softplus_is_positive(self, rng):
        out = softplus(Tensor(rng.standard_normal(50) * 30)).data
        assert np.all(out >= 0)

    @pytest.mark.parametrize('op', [gelu, softplus])
    def test_activation_gradients(self, op):
        assert grad_check(lambda x: op(x), {'x': (1, 2, 3, 3)}, h=1e-5) < 1e-3
