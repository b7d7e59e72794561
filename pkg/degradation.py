"""
Training data: the low-light degradation model y = gamma(x) + n, synthetic
clean scenes, paired PNG directory ingestion and label-consistent
augmentation.
"""

import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from errors import ArgumentError, DatasetError, DimensionError, ImageReadError
from run_logger import RunLogger


class PairSource(str, Enum):
    SYNTHETIC = 'synthetic'
    DIRECTORY = 'directory'


@dataclass
class DegradationParams:
    gain: float = 0.25
    gamma_exponent: float = 1.0
    read_noise: float = 0.0
    shot_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise ArgumentError(f"gain must lie in (0, 1], got {self.gain}")
        if self.gamma_exponent < 1.0:
            raise ArgumentError(f"gamma_exponent must be >= 1, got {self.gamma_exponent}")
        if self.read_noise < 0.0 or self.shot_noise < 0.0:
            raise ArgumentError("noise levels must be non-negative")


@dataclass
class ImagePair:
    low: np.ndarray
    high: np.ndarray
    source: PairSource
    id: str

    def __post_init__(self):
        if self.low.shape != self.high.shape:
            raise DimensionError(f"pair '{self.id}' has mismatched shapes {self.low.shape} vs {self.high.shape}")
        if self.low.ndim != 3 or self.low.shape[0] != 3:
            raise DimensionError(f"pair '{self.id}' must hold 3,H,W images, got {self.low.shape}")

    @property
    def shape(self):
        return self.low.shape


def synthesize_low_light(clean, params, pair_id='synthetic'):
    """
    y = clip(gain * clean**g + n, 0, 1), n ~ N(0, read^2 + shot * signal)
    per pixel. Without noise no random numbers are drawn.
    """
    clean = np.asarray(getattr(clean, 'data', clean), dtype=np.float32)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise DimensionError(f"synthesize_low_light expects a 3,H,W image, got {clean.shape}")
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise ArgumentError("clean image values must lie in [0, 1]")

    signal = params.gain * np.power(clean.astype(np.float64), params.gamma_exponent)
    if params.read_noise > 0.0 or params.shot_noise > 0.0:
        rng = np.random.default_rng(params.seed)
        std = np.sqrt(params.read_noise ** 2 + params.shot_noise * signal)
        signal = signal + std * rng.standard_normal(signal.shape)
    low = np.clip(signal, 0.0, 1.0).astype(np.float32)
    return ImagePair(low, clean.copy(), PairSource.SYNTHETIC, pair_id)


def random_degradation(rng):
    """Draw low-light parameters: strong darkening with mild read/shot noise"""
    return DegradationParams(
        gain=float(rng.uniform(0.1, 0.35)),
        gamma_exponent=float(rng.uniform(1.0, 1.5)),
        read_noise=float(rng.uniform(0.0, 0.01)),
        shot_noise=float(rng.uniform(0.0, 0.004)),
        seed=int(rng.integers(0, 2 ** 31 - 1)),
    )


def synthetic_scene(size, rng):
    """Smooth colour field with a few hard-edged rectangles, values in [0.05, 0.95]"""
    height, width = (size, size) if np.isscalar(size) else size
    field = rng.standard_normal((3, height, width))
    field = gaussian_filter(field, sigma=(0, height / 8, width / 8), mode='wrap')
    field -= field.min(axis=(1, 2), keepdims=True)
    field /= np.maximum(field.max(axis=(1, 2), keepdims=True), 1e-12)
    scene = 0.2 + 0.6 * field
    for _ in range(int(rng.integers(2, 5))):
        top, left = rng.integers(0, height - 2), rng.integers(0, width - 2)
        bottom = top + int(rng.integers(2, max(3, height // 2)))
        right = left + int(rng.integers(2, max(3, width // 2)))
        scene[:, top:bottom, left:right] = rng.uniform(0.05, 0.95, size=(3, 1, 1))
    return np.clip(scene, 0.05, 0.95).astype(np.float32)


def build_synthetic_dataset(count, size=64, seed=0):
    """`count` degraded/clean pairs of synthetic scenes, fully seeded"""
    if count < 1:
        raise ArgumentError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    pairs = []
    for index in range(count):
        clean = synthetic_scene(size, rng)
        pairs.append(synthesize_low_light(clean, random_degradation(rng), pair_id=f'synthetic-{index:04d}'))
    return pairs


def read_png(path):
    """8-bit image file -> float32 array (3, H, W) in [0, 1]"""
    try:
        with Image.open(path) as image:
            rgb = np.asarray(image.convert('RGB'), dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageReadError(f"cannot read image '{path}': {exc}") from exc
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0)


def write_png(path, image):
    """Array (3, H, W) or (H, W, 3) / (H, W) in [0, 1] -> 8-bit PNG"""
    data = np.asarray(getattr(image, 'data', image), dtype=np.float64)
    if data.ndim == 3 and data.shape[0] in (1, 3) and data.shape[-1] not in (1, 3):
        data = data.transpose(1, 2, 0)
    if data.ndim == 3 and data.shape[-1] == 1:
        data = data[..., 0]
    pixels = np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format='PNG')


def _as_dir_list(dirs):
    if isinstance(dirs, (str, Path)):
        return [Path(dirs)]
    return [Path(d) for d in dirs]


def load_paired_dataset(low_dirs, high_dirs, logger=None):
    """
    Pair PNGs with identical filenames across low/high directories.

    Several directory pairs may be given; their pairs are concatenated in
    order. Files present on one side only, unreadable files and size
    mismatches are skipped and reported to `logger`. Without a logger the
    skips are summarised in a single UserWarning.
    """
    low_dirs, high_dirs = _as_dir_list(low_dirs), _as_dir_list(high_dirs)
    if len(low_dirs) != len(high_dirs):
        raise ArgumentError("low and high directory lists must have the same length")

    log = logger if logger is not None else RunLogger()
    pairs = []
    for low_dir, high_dir in zip(low_dirs, high_dirs):
        for directory in (low_dir, high_dir):
            if not directory.is_dir():
                raise DatasetError(f"dataset directory '{directory}' does not exist")
        low_names = {p.name for p in low_dir.iterdir() if p.suffix.lower() == '.png'}
        high_names = {p.name for p in high_dir.iterdir() if p.suffix.lower() == '.png'}
        prefix = f'{low_dir.name}/' if len(low_dirs) > 1 else ''

        for name in sorted(low_names - high_names):
            log.log_warning('dataset', low_dir / name, 'no matching high image')
        for name in sorted(high_names - low_names):
            log.log_warning('dataset', high_dir / name, 'no matching low image')

        for name in sorted(low_names & high_names):
            try:
                low = read_png(low_dir / name)
                high = read_png(high_dir / name)
            except ImageReadError as exc:
                log.log_warning('dataset', name, str(exc))
                continue
            if low.shape != high.shape:
                log.log_warning('dataset', name, f'size mismatch {low.shape[1:]} vs {high.shape[1:]}')
                continue
            pairs.append(ImagePair(low, high, PairSource.DIRECTORY, prefix + Path(name).stem))

    if logger is None and log.warning_count:
        details = '; '.join(f"{w['item']}: {w['reason']}" for w in log.warning_logs[:5])
        warnings.warn(f"skipped {log.warning_count} dataset file(s): {details}")

    if not pairs:
        raise DatasetError(f"no usable image pairs found in {[str(d) for d in low_dirs]}")
    return pairs


def augment_pair(pair, crop, rng):
    """
    Random crop, horizontal/vertical flips and a 90-degree rotation, applied
    identically to both images. Images smaller than `crop` are mirror-padded.
    """
    low, high = pair.low, pair.high
    _, h, w = low.shape
    pad_h, pad_w = max(0, crop - h), max(0, crop - w)
    if pad_h or pad_w:
        widths = ((0, 0), (0, pad_h), (0, pad_w))
        mode = 'reflect' if pad_h < h and pad_w < w else 'symmetric'
        low, high = np.pad(low, widths, mode=mode), np.pad(high, widths, mode=mode)
        _, h, w = low.shape

    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    flip_h, flip_v = rng.random() < 0.5, rng.random() < 0.5
    turns = int(rng.integers(0, 4))

    def apply(image):
        image = image[:, top:top + crop, left:left + crop]
        if flip_h:
            image = image[:, :, ::-1]
        if flip_v:
            image = image[:, ::-1, :]
        return np.ascontiguousarray(np.rot90(image, turns, axes=(1, 2)))

    return apply(low), apply(high)
