"""
Denoiser stage: SNR-guided fusion of a spatial and a frequency branch inside
a two-level encoder/decoder with pixel-shuffle upsampling and a global
residual on the low-light input.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import uniform_filter

from errors import DimensionError
from fie_stage import fie_block
from nn_layers import bilinear_resize, conv2d, pixel_shuffle, reflect_pad, simple_gate
from tensor_core import Tensor, add, concat, crop, mul

SNR_EPSILON = 1e-4
DOWNSAMPLE_FACTOR = 4


class SkipMode(str, Enum):
    CONCAT = 'concat'
    ADD = 'add'


@dataclass
class SnrMap:
    values: Tensor
    blur_kernel_size: int = 5
    epsilon: float = SNR_EPSILON


@dataclass
class BranchOutputs:
    spatial: Tensor
    frequency: Tensor

    def __post_init__(self):
        if self.spatial.shape != self.frequency.shape:
            raise DimensionError(f"branch shapes differ: {self.spatial.shape} vs {self.frequency.shape}")


@dataclass
class DenoiserOutput:
    x_hat: Tensor
    x_hat_raw: Tensor
    snr_map: SnrMap


def compute_snr_map(x_lol, blur_kernel_size=5, epsilon=SNR_EPSILON):
    """
    Per-pixel reliability of the intermediate image.

    g is the channel mean, g' its k x k box blur (mirror padding) and
    noise = |g - g'|. R = g' / (noise + eps * mean(g)), normalised by its
    per-image maximum and clamped to [0, 1]. The noise floor is relative to
    the image's mean level so R does not change under a global exposure
    scale; an all-black image has no measurable noise and gets R = 1.
    """
    source = x_lol.data if isinstance(x_lol, Tensor) else np.asarray(x_lol)
    dtype = source.dtype if source.dtype.kind == 'f' else np.float32
    data = np.clip(source.astype(np.float64), 0.0, 1.0)
    gray = data.mean(axis=1)
    blurred = uniform_filter(gray, size=(1, blur_kernel_size, blur_kernel_size), mode='mirror')
    noise = np.abs(gray - blurred)

    values = np.ones_like(gray)
    for n in range(gray.shape[0]):
        level = gray[n].mean()
        if level <= 0:
            continue
        ratio = blurred[n] / (noise[n] + epsilon * level)
        peak = ratio.max()
        values[n] = ratio / peak if peak > 0 else 1.0
    values = np.clip(values, 0.0, 1.0)[:, None]
    return SnrMap(Tensor(values.astype(dtype), _keep_dtype=True), blur_kernel_size, epsilon)


def snr_fuse(branches, r_resized):
    """F = O_S * R + O_F * (1 - R), R broadcast over channels"""
    n, _, h, w = branches.spatial.shape
    if r_resized.shape != (n, 1, h, w):
        raise DimensionError(f"SNR map shape {r_resized.shape} does not match branch layout {(n, 1, h, w)}")
    return add(mul(branches.spatial, r_resized), mul(branches.frequency, 1.0 - r_resized))


def _conv(x, params, name, padding=0, stride=1):
    return conv2d(x, params[f'{name}.weight'], params[f'{name}.bias'], stride=stride, padding=padding)


def spatial_block(x, params, prefix):
    hidden = simple_gate(_conv(x, params, f'{prefix}.expand', padding=1))
    return add(_conv(hidden, params, f'{prefix}.project', padding=1), x)


def run_denoiser(x, x_lol, params, skip_mode=SkipMode.CONCAT, spatial_blocks=2, frequency_blocks=2,
                 snr_blur=5, prefix='denoiser', snr_map=None):
    """
    Clean the FIE output. `x_lol` is the unclipped intermediate image (its
    clipped copy drives the SNR map); the global residual adds the original
    low-light input `x`. Inputs whose sides are not multiples of 4 are
    mirror-padded and the result is cropped back.

    A precomputed `snr_map` of shape N,1,H,W replaces the map derived from
    `x_lol`. The map is a constant to the gradient tape either way.
    """
    if x.shape != x_lol.shape:
        raise DimensionError(f"denoiser inputs differ in shape: {x.shape} vs {x_lol.shape}")
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"denoiser expects N,3,H,W input, got {x.shape}")
    skip_mode = SkipMode(skip_mode)
    n, _, h, w = x.shape
    if snr_map is not None and snr_map.values.shape != (n, 1, h, w):
        raise DimensionError(f"SNR map shape {snr_map.values.shape} does not match input {(n, 1, h, w)}")

    pad_h = -h % DOWNSAMPLE_FACTOR
    pad_w = -w % DOWNSAMPLE_FACTOR
    if pad_h or pad_w:
        x_in = reflect_pad(x, bottom=pad_h, right=pad_w)
        lol_in = reflect_pad(x_lol, bottom=pad_h, right=pad_w)
    else:
        x_in, lol_in = x, x_lol

    if snr_map is None:
        snr = compute_snr_map(np.clip(lol_in.data, 0.0, 1.0), snr_blur)
    else:
        padded = reflect_pad(Tensor(snr_map.values.data, _keep_dtype=True), bottom=pad_h, right=pad_w)
        snr = SnrMap(padded, snr_map.blur_kernel_size, snr_map.epsilon)

    skip_full = _conv(concat([lol_in, x_in], axis=1), params, f'{prefix}.stem', padding=1)
    skip_half = _conv(skip_full, params, f'{prefix}.down1', padding=1, stride=2)
    bottleneck = _conv(skip_half, params, f'{prefix}.down2', padding=1, stride=2)

    spatial = bottleneck
    for index in range(spatial_blocks):
        spatial = spatial_block(spatial, params, f'{prefix}.spatial.{index}')
    frequency = bottleneck
    for index in range(frequency_blocks):
        frequency = fie_block(frequency, params, f'{prefix}.frequency.{index}')

    _, _, hq, wq = bottleneck.shape
    r_quarter = bilinear_resize(snr.values, hq, wq)
    features = snr_fuse(BranchOutputs(spatial, frequency), r_quarter)

    for level, skip in (('up1', skip_half), ('up2', skip_full)):
        features = pixel_shuffle(_conv(features, params, f'{prefix}.{level}.expand'), 2)
        if skip_mode is SkipMode.CONCAT:
            features = _conv(concat([features, skip], axis=1), params, f'{prefix}.{level}.merge', padding=1)
        else:
            features = add(features, skip)

    residual = add(_conv(features, params, f'{prefix}.head', padding=1), x_in)
    if pad_h or pad_w:
        residual = crop(residual, h, w)
        snr = SnrMap(Tensor(snr.values.data[:, :, :h, :w], _keep_dtype=True), snr.blur_kernel_size, snr.epsilon)
    x_hat = Tensor(np.clip(residual.data, 0.0, 1.0), _keep_dtype=True)
    return DenoiserOutput(x_hat, residual, snr)
