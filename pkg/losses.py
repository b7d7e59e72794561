"""
Training objective: l1(x_hat, gt) + l1(x_lol, gt) + lambda * perceptual.

The perceptual term is pluggable. The built-in 'sobel' backend compares
Sobel gradient magnitudes of prediction and target; further backends are
added with `register_perceptual`.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from errors import ArgumentError, DimensionError, LossTermError, NonFiniteError
from nn_layers import conv2d, reflect_pad
from tensor_core import Tensor, absolute, channel_mean, reshape, sqrt, tensor_mean

DEFAULT_LAMBDA = 0.1
GRADIENT_EPSILON = 1e-6

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass
class LossBreakdown:
    l1_final: Tensor
    l1_intermediate: Tensor
    perceptual: Tensor
    total: Tensor

    def as_dict(self):
        return {
            'l1_final': float(self.l1_final.data),
            'l1_intermediate': float(self.l1_intermediate.data),
            'perceptual': float(self.perceptual.data),
            'total': float(self.total.data),
        }


class PerceptualLoss(ABC):
    """Differentiable distance between prediction and target"""

    name = None

    @abstractmethod
    def __call__(self, prediction, target):
        pass


_BACKENDS = {}


def register_perceptual(cls):
    """Class decorator adding a backend to the registry under `cls.name`"""
    if not cls.name:
        raise ArgumentError(f"{cls.__name__} needs a non-empty name")
    _BACKENDS[cls.name] = cls
    return cls


def available_perceptual():
    return sorted(_BACKENDS)


def get_perceptual(name):
    if isinstance(name, PerceptualLoss):
        return name
    if name not in _BACKENDS:
        raise ArgumentError(f"unknown perceptual backend '{name}', choose from {available_perceptual()}")
    return _BACKENDS[name]()


def l1(a, b):
    return tensor_mean(absolute(a - b))


@register_perceptual
class SobelGradientLoss(PerceptualLoss):
    name = 'sobel'

    def _magnitude(self, image):
        n, c, h, w = image.shape
        planes = reflect_pad(reshape(image, (n * c, 1, h, w)), 1, 1, 1, 1)
        kernels = np.stack([_SOBEL_X, _SOBEL_X.T])[:, None]
        grads = conv2d(planes, Tensor(kernels.astype(image.dtype), _keep_dtype=True))
        # sum of the two squared responses
        energy = channel_mean(grads * grads) * 2.0
        return sqrt(energy + GRADIENT_EPSILON)

    def __call__(self, prediction, target):
        return l1(self._magnitude(prediction), self._magnitude(target))


@register_perceptual
class NoPerceptualLoss(PerceptualLoss):
    name = 'none'

    def __call__(self, prediction, target):
        return tensor_mean(prediction * 0.0)


def _term(name, fn, *args):
    try:
        return fn(*args)
    except NonFiniteError as exc:
        raise LossTermError(name, exc.op_name) from exc


def total_loss(x_hat, x_lol, gt, lam=DEFAULT_LAMBDA, perceptual='sobel'):
    """Distortion on both stage outputs plus the weighted perceptual term"""
    if not (x_hat.shape == x_lol.shape == gt.shape):
        raise DimensionError(f"total_loss needs equal shapes, got {x_hat.shape}, {x_lol.shape}, {gt.shape}")
    if lam < 0:
        raise ArgumentError(f"perceptual weight must be non-negative, got {lam}")
    backend = get_perceptual(perceptual)
    final = _term('l1_final', l1, x_hat, gt)
    intermediate = _term('l1_intermediate', l1, x_lol, gt)
    perceptual_term = _term('perceptual', backend, x_hat, gt)
    total = _term('total', lambda: final + intermediate + perceptual_term * lam)
    return LossBreakdown(final, intermediate, perceptual_term, total)
