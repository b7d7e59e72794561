"""Differentiable image layers on top of tensor_core"""

from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.special import erf, expit

from errors import ArgumentError, DimensionError
from tensor_core import make_result, split_channels, mul


def _require_4d(tensor, op_name):
    if tensor.ndim != 4:
        raise DimensionError(f"{op_name} expects an N,C,H,W tensor, got shape {tensor.shape}")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding"""
    _require_4d(x, 'conv2d')
    _require_4d(weight, 'conv2d weight')
    if stride < 1:
        raise ArgumentError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ArgumentError(f"conv2d padding must be >= 0, got {padding}")

    n, c_in, h, w = x.shape
    c_out, w_in, kh, kw = weight.shape
    if w_in != c_in:
        raise DimensionError(f"conv2d weight expects {w_in} input channels, input has {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel must have odd extents, got {kh}x{kw}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match {c_out} output channels")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d output would be empty for input {h}x{w} and kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    kernel = weight.data

    def window(i, j):
        return (slice(None), slice(None),
                slice(i, i + stride * (h_out - 1) + 1, stride),
                slice(j, j + stride * (w_out - 1) + 1, stride))

    # accumulate as (Cout, N, H', W') and transpose once
    acc = np.zeros((c_out, n, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(kernel[:, :, i, j], xp[window(i, j)], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        g_t = g.transpose(1, 0, 2, 3)
        grad_xp = np.zeros_like(xp)
        grad_w = np.zeros_like(kernel)
        for i in range(kh):
            for j in range(kw):
                patch = xp[window(i, j)]
                grad_w[:, :, i, j] = np.tensordot(g_t, patch, axes=([1, 2, 3], [0, 2, 3]))
                grad_xp[window(i, j)] += np.tensordot(kernel[:, :, i, j], g_t, axes=([0], [0])).transpose(1, 0, 2, 3)
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w] if padding else grad_xp
        grad_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_w, grad_b

    return make_result(out, (x, weight, bias), backward, 'conv2d')


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalise across channels at every (n, h, w) position"""
    _require_4d(x, 'layer_norm')
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {channels} channels")
    if eps <= 0:
        raise ArgumentError(f"layer_norm eps must be positive, got {eps}")

    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    g4 = gamma.data[None, :, None, None]
    out = g4 * x_hat + beta.data[None, :, None, None]

    def backward(g):
        grad_gamma = (g * x_hat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        d_hat = g * g4
        grad_x = inv_std * (d_hat - d_hat.mean(axis=1, keepdims=True)
                            - x_hat * (d_hat * x_hat).mean(axis=1, keepdims=True))
        return grad_x, grad_gamma, grad_beta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, 'layer_norm')


def simple_gate(x):
    """First half of the channels times the second half"""
    _require_4d(x, 'simple_gate')
    if x.shape[1] % 2:
        raise DimensionError(f"simple_gate needs an even channel count, got {x.shape[1]}")
    first, second = split_channels(x, 2)
    return mul(first, second)


def pixel_shuffle(x, r):
    """Depth-to-space: channel c*r*r + i*r + j lands at (h*r + i, w*r + j)"""
    _require_4d(x, 'pixel_shuffle')
    if r < 1:
        raise ArgumentError(f"pixel_shuffle factor must be >= 1, got {r}")
    n, c, h, w = x.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    out_c = c // (r * r)
    out = x.data.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * r, w * r)

    def backward(g):
        return (_unshuffle_array(g, r),)

    return make_result(np.ascontiguousarray(out), (x,), backward, 'pixel_shuffle')


def _unshuffle_array(arr, r):
    n, c, h, w = arr.shape
    return np.ascontiguousarray(
        arr.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r))


@lru_cache(maxsize=256)
def interpolation_matrix(in_size, out_size, dtype_name='float32'):
    """Sparse (out_size x in_size) bilinear operator, align-corners=false, edge clamped"""
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    rows = np.concatenate([np.arange(out_size), np.arange(out_size)])
    cols = np.concatenate([lo, hi])
    vals = np.concatenate([1.0 - frac, frac])
    matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(out_size, in_size))
    return matrix.astype(dtype_name)


def _apply_along(arr, matrix, axis):
    moved = np.moveaxis(arr, axis, 0)
    lead = moved.shape[0]
    rest = moved.shape[1:]
    result = matrix @ moved.reshape(lead, -1)
    return np.moveaxis(np.asarray(result).reshape((matrix.shape[0],) + rest), 0, axis)


def bilinear_resize(x, out_h, out_w):
    _require_4d(x, 'bilinear_resize')
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"bilinear_resize target must be at least 1x1, got {out_h}x{out_w}")
    _, _, h, w = x.shape
    a_h = interpolation_matrix(h, out_h, x.dtype.name)
    a_w = interpolation_matrix(w, out_w, x.dtype.name)
    out = _apply_along(_apply_along(x.data, a_h, 2), a_w, 3)

    def backward(g):
        return (_apply_along(_apply_along(g, a_w.T.tocsr(), 3), a_h.T.tocsr(), 2).astype(x.dtype, copy=False),)

    return make_result(np.ascontiguousarray(out, dtype=x.dtype), (x,), backward, 'bilinear_resize')


def _reflect_indices(size, before, after):
    return np.pad(np.arange(size), (before, after), mode='reflect') if size > 1 else np.zeros(size + before + after, dtype=np.int64)


def reflect_pad(x, top=0, bottom=0, left=0, right=0):
    """Mirror padding (edge sample not repeated)"""
    _require_4d(x, 'reflect_pad')
    _, _, h, w = x.shape
    idx_h = _reflect_indices(h, top, bottom)
    idx_w = _reflect_indices(w, left, right)
    out = x.data[:, :, idx_h][:, :, :, idx_w]

    def backward(g):
        grad_w = np.zeros(g.shape[:3] + (w,), dtype=g.dtype)
        np.add.at(grad_w, (slice(None), slice(None), slice(None), idx_w), g)
        grad = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(grad, (slice(None), slice(None), idx_h), grad_w)
        return (grad,)

    return make_result(out, (x,), backward, 'reflect_pad')


def gelu(x):
    """Exact (erf) GELU"""
    data = x.data
    cdf = 0.5 * (1.0 + erf(data / np.sqrt(2.0)))
    out = (data * cdf).astype(x.dtype, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * data * data) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + data * pdf),)

    return make_result(out, (x,), backward, 'gelu')


def softplus(x):
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * expit(x.data),), 'softplus')


def kaiming_uniform(shape, rng, dtype=np.float32):
    """Fan-in Kaiming-uniform initialisation for conv kernels"""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
