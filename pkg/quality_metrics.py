import numpy as np
from scipy.ndimage import gaussian_filter

from errors import DimensionError

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, an 11 x 11 window
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(image):
    data = getattr(image, 'data', image)
    return np.asarray(data, dtype=np.float64)


def _check_shapes(a, b, name):
    if a.shape != b.shape:
        raise DimensionError(f"{name} needs equal shapes, got {a.shape} and {b.shape}")


def psnr(a, b):
    """RGB PSNR in dB for images in [0, 1]; capped at 100 dB"""
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b, 'psnr')
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _to_gray(image):
    if image.ndim == 2:
        return image[None]
    if image.ndim == 3:
        return image.mean(axis=0)[None]
    if image.ndim == 4:
        return image.mean(axis=1)
    raise DimensionError(f"ssim expects H,W / C,H,W / N,C,H,W input, got shape {image.shape}")


def ssim(a, b):
    """
    Mean SSIM of the channel-mean gray images, Gaussian window (sigma 1.5,
    11 x 11) and L = 1. Only fully covered window positions are averaged.
    Batched inputs return the mean over images.
    """
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b, 'ssim')
    ga, gb = _to_gray(a), _to_gray(b)
    if ga.shape[-2] < SSIM_WINDOW or ga.shape[-1] < SSIM_WINDOW:
        raise DimensionError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ga.shape[-2:]}")

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    radius = SSIM_WINDOW // 2
    scores = []
    for x, y in zip(ga, gb):
        def blur(img):
            return gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_TRUNCATE)[radius:-radius, radius:-radius]

        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x ** 2
        var_y = blur(y * y) - mu_y ** 2
        cov = blur(x * y) - mu_x * mu_y
        numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        denominator = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(numerator / denominator)))
    return float(np.mean(scores))
