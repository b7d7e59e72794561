"""
Fourier Illumination Enhancement stage.

A Module Map is estimated from a half-resolution copy of the input, upscaled
to the full-resolution frequency grid and used to divide the input amplitude.
The phase is left untouched and the inverse transform gives x_lol.
"""

from dataclasses import dataclass

import numpy as np

from errors import DimensionError, InvariantViolation
from nn_layers import bilinear_resize, conv2d, gelu, layer_norm, simple_gate, softplus
from spectral import AmpPhase, Spectrum, decompose, fft2, hermitian_symmetrize, ifft2, recompose
from tensor_core import Tensor, add, concat, split_channels

MAP_EPSILON = 1e-4
NORM_EPSILON = 1e-6


@dataclass
class ModuleMap:
    values: Tensor
    epsilon: float = MAP_EPSILON


@dataclass
class IlluminationOutput:
    x_lol: Tensor
    x_lol_raw: Tensor
    module_map: Tensor


def fre_mlp(z, params, prefix):
    """Pointwise MLP applied to the stacked real/imaginary spectrum"""
    spectrum = fft2(z)
    stacked = concat([spectrum.real, spectrum.imag], axis=1)
    hidden = conv2d(stacked, params[f'{prefix}.conv1.weight'], params[f'{prefix}.conv1.bias'])
    hidden = gelu(hidden)
    hidden = conv2d(hidden, params[f'{prefix}.conv2.weight'], params[f'{prefix}.conv2.bias'])
    real, imag = split_channels(hidden, 2)
    return ifft2(Spectrum(real, imag))


def gated_ffn(z, params, prefix):
    hidden = conv2d(z, params[f'{prefix}.expand.weight'], params[f'{prefix}.expand.bias'])
    hidden = simple_gate(hidden)
    return conv2d(hidden, params[f'{prefix}.project.weight'], params[f'{prefix}.project.bias'])


def fie_block(z, params, prefix):
    """z1 = FreMLP(LN(z)) + z; z2 = FFN(LN(z1)) + z1"""
    normed = layer_norm(z, params[f'{prefix}.norm1.gamma'], params[f'{prefix}.norm1.beta'], NORM_EPSILON)
    z1 = add(fre_mlp(normed, params, f'{prefix}.fre_mlp'), z)
    normed = layer_norm(z1, params[f'{prefix}.norm2.gamma'], params[f'{prefix}.norm2.beta'], NORM_EPSILON)
    return add(gated_ffn(normed, params, f'{prefix}.ffn'), z1)


def estimate_module_map(x_half, params, num_blocks, prefix='fie', epsilon=MAP_EPSILON):
    features = conv2d(x_half, params[f'{prefix}.stem.weight'], params[f'{prefix}.stem.bias'], padding=1)
    for index in range(num_blocks):
        features = fie_block(features, params, f'{prefix}.blocks.{index}')
    logits = conv2d(features, params[f'{prefix}.head.weight'], params[f'{prefix}.head.bias'], padding=1)
    values = softplus(logits) + epsilon
    if np.any(values.data < values.dtype.type(epsilon)):
        raise InvariantViolation("module map fell below its epsilon floor")
    return ModuleMap(values, epsilon)


def _constant_map(module_map, shape, like):
    if isinstance(module_map, ModuleMap):
        module_map = module_map.values
    if isinstance(module_map, Tensor):
        return module_map
    return Tensor(np.full(shape, module_map, dtype=like.dtype), _keep_dtype=True)


def enhance_illumination(x, params, num_blocks=3, prefix='fie', module_map=None):
    """
    Brighten `x` by dividing its Fourier amplitude by the estimated Module Map.

    `module_map` replaces the estimate with an explicit full-resolution map
    (tensor, ModuleMap or constant). x_lol is clipped to [0, 1]; x_lol_raw is
    the unclipped reconstruction that carries gradients.
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"enhance_illumination expects N,3,H,W input, got {x.shape}")
    _, _, h, w = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"enhance_illumination needs H,W >= 2, got {h}x{w}")

    ap = decompose(fft2(x))
    if module_map is None:
        x_half = bilinear_resize(x, h // 2, w // 2)
        estimated = estimate_module_map(x_half, params, num_blocks, prefix)
        full_map = bilinear_resize(estimated.values, h, w)
    else:
        full_map = _constant_map(module_map, x.shape, x)
    full_map = hermitian_symmetrize(full_map)

    enhanced = AmpPhase(ap.amplitude / full_map, ap.phase)
    raw = ifft2(recompose(enhanced))
    clipped = Tensor(np.clip(raw.data, 0.0, 1.0), _keep_dtype=True)
    return IlluminationOutput(clipped, raw, full_map)
