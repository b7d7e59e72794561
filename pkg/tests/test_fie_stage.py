import numpy as np
import pytest
from scipy.special import erf

from errors import DimensionError
from fie_stage import MAP_EPSILON, ModuleMap, enhance_illumination, estimate_module_map, fie_block, fre_mlp
from grad_check import grad_check
from model_runtime import WeightStore
from tensor_core import Tensor, precision

from reference import dft_matrix


def float64_params(weights):
    return {name: Tensor(array.astype(np.float64), _keep_dtype=True) for name, array in weights.items()}


def random_fre_mlp_params(rng, channels, prefix='mlp'):
    width = 2 * channels
    return {
        f'{prefix}.conv1.weight': rng.standard_normal((width, width, 1, 1)) * 0.5,
        f'{prefix}.conv1.bias': rng.standard_normal(width) * 0.1,
        f'{prefix}.conv2.weight': rng.standard_normal((width, width, 1, 1)) * 0.5,
        f'{prefix}.conv2.bias': rng.standard_normal(width) * 0.1,
    }


def fre_mlp_oracle(z, arrays, prefix='mlp'):
    """Dense-DFT evaluation of the frequency MLP"""
    n, c, h, w = z.shape
    f_h, f_w = dft_matrix(h), dft_matrix(w)
    spectrum = f_h @ z @ f_w
    stacked = np.concatenate([spectrum.real, spectrum.imag], axis=1)

    def pointwise(x, name):
        weight = arrays[f'{prefix}.{name}.weight'][:, :, 0, 0]
        return np.einsum('oc,nchw->nohw', weight, x) + arrays[f'{prefix}.{name}.bias'][None, :, None, None]

    hidden = pointwise(stacked, 'conv1')
    hidden = 0.5 * hidden * (1.0 + erf(hidden / np.sqrt(2.0)))
    out = pointwise(hidden, 'conv2')
    complex_out = out[:, :c] + 1j * out[:, c:]
    return (np.conj(f_h) @ complex_out @ np.conj(f_w)).real


class TestFreMLP:
    def test_identity_kernels_pass_input_through(self, rng):
        width = 4
        eye = np.eye(width)[:, :, None, None]
        arrays = {
            'mlp.conv1.weight': eye, 'mlp.conv1.bias': np.full(width, 50.0),
            'mlp.conv2.weight': eye, 'mlp.conv2.bias': np.full(width, -50.0),
        }
        z = rng.random((1, 2, 8, 8)) * 0.1
        with precision('float64'):
            out = fre_mlp(Tensor(z), {k: Tensor(v) for k, v in arrays.items()}, 'mlp')
        np.testing.assert_allclose(out.data, z, atol=1e-10)

    @pytest.mark.parametrize('size', [(8, 8), (6, 10), (9, 7)])
    def test_matches_dense_dft_oracle(self, rng, size):
        arrays = random_fre_mlp_params(rng, 3)
        z = rng.standard_normal((1, 3) + size)
        out = fre_mlp(Tensor(z), {k: Tensor(v) for k, v in arrays.items()}, 'mlp')
        assert np.max(np.abs(out.data - fre_mlp_oracle(z, arrays))) < 1e-4

    def test_single_pixel_change_reaches_whole_image(self, rng):
        arrays = random_fre_mlp_params(rng, 2)
        z = rng.random((1, 2, 16, 16))
        poked = z.copy()
        poked[0, 0, 3, 5] += 1.0
        with precision('float64'):
            params = {k: Tensor(v) for k, v in arrays.items()}
            delta = fre_mlp(Tensor(poked), params, 'mlp').data - fre_mlp(Tensor(z), params, 'mlp').data
        changed = np.abs(delta).max(axis=1) > 1e-9
        assert changed.mean() > 0.9

    def test_gradient(self, rng):
        arrays = random_fre_mlp_params(rng, 2)
        inputs = {'z': (1, 2, 4, 5), **arrays}
        error = grad_check(lambda z, **p: fre_mlp(z, p, 'mlp'), inputs, h=1e-5, projection='random', floor=1e-6)
        assert error < 1e-3


class TestFIEBlock:
    def test_zero_weights_are_identity(self, rng, tiny_config):
        params = WeightStore.zeros(tiny_config).tensors()
        z = Tensor(rng.standard_normal((1, tiny_config.nc, 6, 6)))
        out = fie_block(z, params, 'fie.blocks.0')
        np.testing.assert_array_equal(out.data, z.data)

    def test_gradient(self, tiny_weights):
        prefix = 'fie.blocks.0'
        names = [f'{prefix}.norm1.gamma', f'{prefix}.fre_mlp.conv1.weight', f'{prefix}.ffn.expand.weight']
        inputs = {'z': (1, 4, 5, 6), **{name: tiny_weights[name].astype(np.float64) for name in names}}
        fixed = float64_params(tiny_weights)
        error = grad_check(lambda z, **p: fie_block(z, {**fixed, **p}, prefix), inputs, h=1e-5,
                           projection='random', floor=1e-6)
        assert error < 1e-3


class TestModuleMap:
    def test_map_respects_epsilon_floor(self, rng, tiny_config, tiny_weights):
        weights = tiny_weights.replace(fie__head__bias=np.full(3, -60.0, dtype=np.float32))
        x_half = Tensor(rng.random((1, 3, 8, 8)))
        module_map = estimate_module_map(x_half, weights.tensors(), tiny_config.fie_blocks)
        assert isinstance(module_map, ModuleMap)
        assert module_map.values.shape == (1, 3, 8, 8)
        assert np.all(module_map.values.data >= np.float32(MAP_EPSILON))

    def test_identity_bias_gives_unit_map(self, rng, tiny_config):
        params = WeightStore.identity(tiny_config).tensors()
        module_map = estimate_module_map(Tensor(rng.random((1, 3, 4, 4))), params, tiny_config.fie_blocks)
        np.testing.assert_allclose(module_map.values.data, 1.0, atol=1e-6)


class TestEnhanceIllumination:
    def test_unit_map_returns_input(self, rng, tiny_weights):
        x = rng.random((1, 3, 16, 12)).astype(np.float32)
        out = enhance_illumination(Tensor(x), tiny_weights.tensors(), num_blocks=1, module_map=1.0)
        assert np.max(np.abs(out.x_lol.data - x)) < 1e-5

    def test_constant_map_scales_the_image(self, rng, tiny_weights):
        x = rng.random((1, 3, 10, 10)) * 0.4
        out = enhance_illumination(Tensor(x), tiny_weights.tensors(), num_blocks=1, module_map=0.5)
        assert np.max(np.abs(out.x_lol_raw.data - 2.0 * x)) < 1e-5

    def test_output_is_clipped_but_raw_is_not(self, rng, tiny_weights):
        x = rng.random((1, 3, 8, 8)) * 0.5 + 0.5
        out = enhance_illumination(Tensor(x), tiny_weights.tensors(), num_blocks=1, module_map=0.25)
        assert out.x_lol_raw.data.max() > 1.0
        assert out.x_lol.data.min() >= 0.0 and out.x_lol.data.max() <= 1.0

    @pytest.mark.parametrize('size', [(16, 16), (9, 7), (2, 2), (33, 20)])
    def test_estimated_map_covers_full_grid(self, rng, tiny_config, tiny_weights, size):
        x = Tensor(rng.random((2, 3) + size))
        out = enhance_illumination(x, tiny_weights.tensors(), num_blocks=tiny_config.fie_blocks)
        assert out.x_lol.shape == x.shape
        assert out.module_map.shape == x.shape
        assert np.all(out.module_map.data > 0)

    def test_phase_is_preserved(self, rng, tiny_config, tiny_weights):
        x = rng.random((1, 3, 16, 16))
        with precision('float64'):
            out = enhance_illumination(Tensor(x), float64_params(tiny_weights), tiny_config.fie_blocks)
        before = np.fft.fft2(x)
        after = np.fft.fft2(out.x_lol_raw.data)
        mask = np.abs(before) > 1e-6
        drift = np.angle(after * np.conj(before))[mask]
        assert np.max(np.abs(drift)) < 1e-6

    def test_rejects_wrong_channel_count(self, tiny_weights):
        with pytest.raises(DimensionError):
            enhance_illumination(Tensor(np.zeros((1, 4, 8, 8))), tiny_weights.tensors())

    def test_rejects_single_row(self, tiny_weights):
        with pytest.raises(DimensionError):
            enhance_illumination(Tensor(np.zeros((1, 3, 1, 8))), tiny_weights.tensors())

    @pytest.mark.parametrize('seed', range(20))
    def test_whole_stage_gradient(self, tiny_config, tiny_weights, seed):
        names = ['fie.stem.weight', 'fie.blocks.0.fre_mlp.conv2.weight', 'fie.head.bias']
        fixed = float64_params(tiny_weights)
        x = np.random.default_rng(seed).random((1, 3, 8, 8))
        inputs = {'x': x, **{name: tiny_weights[name].astype(np.float64) for name in names}}

        def stage(x, **p):
            return enhance_illumination(x, {**fixed, **p}, tiny_config.fie_blocks).x_lol_raw

        error = grad_check(stage, inputs, h=1e-5, seed=seed, max_coords=24, projection='random', floor=1e-6)
        assert error < 1e-3
