"""
Orthonormal 2-D Fourier transforms and amplitude/phase handling.

fft2 follows X(u,v) = 1/sqrt(HW) * sum x(h,w) exp(-i2pi(hu/H + wv/W)) and
ifft2 uses the matching 1/sqrt(HW) factor, so the pair is unitary. scipy.fft
handles arbitrary (non power-of-two) sizes. Spectra are kept as separate
real/imaginary tensors so they flow through the ordinary autodiff machinery.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from errors import ArgumentError, DimensionError
from tensor_core import Tensor, atan2, cos, hypot, make_result, make_results, mul, sin

_AXES = (-2, -1)


@dataclass
class Spectrum:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(f"spectrum planes differ in shape: {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self):
        return self.real.shape


@dataclass
class AmpPhase:
    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise DimensionError(f"amplitude {self.amplitude.shape} and phase {self.phase.shape} differ in shape")


def _complex_transform(real, imag, inverse, op_name):
    """Unitary transform of real + i*imag; `imag` may be None for real input"""
    dtype = real.dtype
    z = real.data if imag is None else real.data + 1j * imag.data
    transform, adjoint = (sfft.ifft2, sfft.fft2) if inverse else (sfft.fft2, sfft.ifft2)
    out = transform(z, axes=_AXES, norm='ortho')

    def backward(g_real, g_imag):
        adj = adjoint(g_real + 1j * g_imag, axes=_AXES, norm='ortho')
        grad_real = adj.real.astype(dtype, copy=False)
        grad_imag = None if imag is None else adj.imag.astype(dtype, copy=False)
        return grad_real, grad_imag

    return make_results((out.real.astype(dtype), out.imag.astype(dtype)), (real, imag), backward, op_name)


def fft2(x):
    """Orthonormal forward transform over the last two axes"""
    if x.ndim != 4:
        raise DimensionError(f"fft2 expects an N,C,H,W tensor, got shape {x.shape}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"fft2 needs H,W >= 1, got {x.shape[2]}x{x.shape[3]}")
    real, imag = _complex_transform(x, None, inverse=False, op_name='fft2')
    return Spectrum(real, imag)


def ifft2(spectrum, return_residue=False):
    """
    Orthonormal inverse transform; returns the real part.

    With return_residue=True also returns the largest absolute imaginary
    component of the reconstruction (rounding-level for Hermitian spectra).
    """
    real, imag = _complex_transform(spectrum.real, spectrum.imag, inverse=True, op_name='ifft2')
    if return_residue:
        return real, float(np.max(np.abs(imag.data))) if imag.size else 0.0
    return real


def decompose(spectrum):
    """amplitude = sqrt(re^2 + im^2), phase = atan2(im, re); phase 0 at the origin"""
    return AmpPhase(hypot(spectrum.real, spectrum.imag), atan2(spectrum.imag, spectrum.real))


def recompose(ap):
    if np.any(ap.amplitude.data < 0):
        raise ArgumentError("recompose requires a non-negative amplitude")
    return Spectrum(mul(ap.amplitude, cos(ap.phase)), mul(ap.amplitude, sin(ap.phase)))


def reflect_frequencies(x):
    """Map bin (u, v) to ((-u) mod H, (-v) mod W)"""
    _, _, h, w = x.shape
    idx_h = (-np.arange(h)) % h
    idx_w = (-np.arange(w)) % w

    def backward(g):
        # the reflection is an involution, so it is its own adjoint
        return (g[:, :, idx_h][:, :, :, idx_w],)

    return make_result(x.data[:, :, idx_h][:, :, :, idx_w], (x,), backward, 'reflect_frequencies')


def hermitian_symmetrize(x):
    """Average a frequency-grid map with its reflection so M(u,v) = M(-u,-v)"""
    return (x + reflect_frequencies(x)) * 0.5
