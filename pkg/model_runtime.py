"""
End-to-end model assembly: configuration, weight storage and serialisation,
the two-stage forward pass, and parameter / FLOP accounting.
"""

import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from denoiser import SkipMode, run_denoiser
from errors import ArgumentError, DimensionError, ManifestError, TruncatedWeightsError, WeightShapeError
from fie_stage import MAP_EPSILON, enhance_illumination
from nn_layers import kaiming_uniform
from tensor_core import Tensor, concat

WEIGHTS_MAGIC = 'FLOLW1'
ABLATION_WIDTHS = (16, 32, 64)


@dataclass
class ModelConfig:
    nc: int = 16
    skip_mode: SkipMode = SkipMode.CONCAT
    fie_blocks: int = 3
    ffn_expansion: int = 2
    snr_blur: int = 5
    spatial_blocks: int = 2
    frequency_blocks: int = 2

    def __post_init__(self):
        self.skip_mode = SkipMode(self.skip_mode)
        if self.nc < 1:
            raise ArgumentError(f"nc must be positive, got {self.nc}")
        if self.fie_blocks < 1:
            raise ArgumentError(f"fie_blocks must be >= 1, got {self.fie_blocks}")
        if self.ffn_expansion < 1:
            raise ArgumentError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")
        if self.snr_blur < 1 or self.snr_blur % 2 == 0:
            raise ArgumentError(f"snr_blur must be a positive odd size, got {self.snr_blur}")
        if self.spatial_blocks < 0 or self.frequency_blocks < 0:
            raise ArgumentError("branch block counts must be non-negative")

    @classmethod
    def from_dict(cls, config):
        defaults = cls()
        return cls(
            nc=int(config.get('nc', defaults.nc)),
            skip_mode=config.get('skip_mode', defaults.skip_mode),
            fie_blocks=int(config.get('fie_blocks', defaults.fie_blocks)),
            ffn_expansion=int(config.get('ffn_expansion', defaults.ffn_expansion)),
            snr_blur=int(config.get('snr_blur', defaults.snr_blur)),
            spatial_blocks=int(config.get('spatial_blocks', defaults.spatial_blocks)),
            frequency_blocks=int(config.get('frequency_blocks', defaults.frequency_blocks)),
        )

    @classmethod
    def preset(cls, name):
        """'flol+' is the light NC=16/concat model, 'flol' the NC=64/add one"""
        presets = {
            'flol+': {'nc': 16, 'skip_mode': 'concat'},
            'flol': {'nc': 64, 'skip_mode': 'add'},
        }
        if name.lower() not in presets:
            raise ArgumentError(f"unknown preset '{name}', choose from {sorted(presets)}")
        return cls.from_dict(presets[name.lower()])

    def to_dict(self):
        values = asdict(self)
        values['skip_mode'] = self.skip_mode.value
        return values


@dataclass
class ManifestEntry:
    name: str
    shape: tuple
    byte_offset: int
    dtype: str = 'f32'

    @property
    def nbytes(self):
        return 4 * int(np.prod(self.shape))


@dataclass
class EnhanceResult:
    x_lol: Tensor
    x_hat: Tensor
    snr_map: Tensor = field(default=None)


@dataclass
class ModelOutputs:
    x_lol: Tensor
    x_lol_raw: Tensor
    x_hat: Tensor
    x_hat_raw: Tensor
    snr_map: Tensor


def _conv_entries(name, c_out, c_in, k):
    return [(f'{name}.weight', (c_out, c_in, k, k)), (f'{name}.bias', (c_out,))]


def _fie_block_entries(prefix, c, expansion):
    return (
        [(f'{prefix}.norm1.gamma', (c,)), (f'{prefix}.norm1.beta', (c,))]
        + _conv_entries(f'{prefix}.fre_mlp.conv1', 2 * c, 2 * c, 1)
        + _conv_entries(f'{prefix}.fre_mlp.conv2', 2 * c, 2 * c, 1)
        + [(f'{prefix}.norm2.gamma', (c,)), (f'{prefix}.norm2.beta', (c,))]
        + _conv_entries(f'{prefix}.ffn.expand', 2 * expansion * c, c, 1)
        + _conv_entries(f'{prefix}.ffn.project', c, expansion * c, 1)
    )


def parameter_shapes(config):
    """Ordered (name, shape) list for every tensor of the configured model"""
    c, e = config.nc, config.ffn_expansion
    entries = _conv_entries('fie.stem', c, 3, 3)
    for index in range(config.fie_blocks):
        entries += _fie_block_entries(f'fie.blocks.{index}', c, e)
    entries += _conv_entries('fie.head', 3, c, 3)

    entries += _conv_entries('denoiser.stem', c, 6, 3)
    entries += _conv_entries('denoiser.down1', c, c, 3)
    entries += _conv_entries('denoiser.down2', c, c, 3)
    for index in range(config.spatial_blocks):
        entries += _conv_entries(f'denoiser.spatial.{index}.expand', 2 * c, c, 3)
        entries += _conv_entries(f'denoiser.spatial.{index}.project', c, c, 3)
    for index in range(config.frequency_blocks):
        entries += _fie_block_entries(f'denoiser.frequency.{index}', c, e)
    for level in ('up1', 'up2'):
        entries += _conv_entries(f'denoiser.{level}.expand', 4 * c, c, 1)
        if config.skip_mode is SkipMode.CONCAT:
            entries += _conv_entries(f'denoiser.{level}.merge', c, 2 * c, 3)
    entries += _conv_entries('denoiser.head', 3, c, 3)
    return entries


class WeightStore:
    """Named, ordered, read-only collection of float32 parameter arrays"""

    def __init__(self, entries):
        self._arrays = OrderedDict()
        for name, array in entries:
            if name in self._arrays:
                raise ManifestError(f"duplicate tensor name '{name}'")
            stored = np.array(array, dtype=np.float32, copy=True)
            stored.flags.writeable = False
            self._arrays[name] = stored

    @classmethod
    def initialize(cls, config, seed=0):
        """Kaiming-uniform conv kernels, zero biases, unit/zero norm affines"""
        rng = np.random.default_rng(seed)
        entries = []
        for name, shape in parameter_shapes(config):
            if name.endswith('.weight'):
                entries.append((name, kaiming_uniform(shape, rng)))
            elif name.endswith('.gamma'):
                entries.append((name, np.ones(shape, dtype=np.float32)))
            else:
                entries.append((name, np.zeros(shape, dtype=np.float32)))
        return cls(entries)

    @classmethod
    def zeros(cls, config):
        return cls((name, np.zeros(shape, dtype=np.float32)) for name, shape in parameter_shapes(config))

    @classmethod
    def identity(cls, config):
        """Zero weights with the map head biased to a unit map: the model passes x through"""
        head_bias = np.full((3,), identity_map_bias(), dtype=np.float32)
        return cls.zeros(config).replace(fie__head__bias=head_bias)

    @classmethod
    def from_tensors(cls, tensors):
        return cls((name, tensor.data) for name, tensor in tensors.items())

    def replace(self, **arrays):
        """Copy of the store with some tensors swapped (names use '__' for '.')"""
        updates = {name.replace('__', '.'): value for name, value in arrays.items()}
        unknown = set(updates) - set(self._arrays)
        if unknown:
            raise WeightShapeError(sorted(unknown)[0], "not present in the store")
        return WeightStore((name, updates.get(name, array)) for name, array in self._arrays.items())

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    @property
    def num_parameters(self):
        return int(sum(array.size for array in self._arrays.values()))

    def manifest(self):
        entries = []
        offset = 0
        for name, array in self._arrays.items():
            entry = ManifestEntry(name, tuple(array.shape), offset)
            entries.append(entry)
            offset += entry.nbytes
        return entries

    @property
    def total_bytes(self):
        return 4 * self.num_parameters

    def tensors(self, requires_grad=False):
        """Fresh Tensor views; trainable copies when requires_grad is set"""
        return {
            name: Tensor(array.copy() if requires_grad else array, requires_grad=requires_grad, name=name)
            for name, array in self._arrays.items()
        }

    def validate(self, config):
        """Raise WeightShapeError for the first tensor that does not fit `config`"""
        expected = parameter_shapes(config)
        expected_names = {name for name, _ in expected}
        for name, shape in expected:
            if name not in self._arrays:
                raise WeightShapeError(name, "missing from the weight store")
            actual = tuple(self._arrays[name].shape)
            if actual != tuple(shape):
                raise WeightShapeError(name, f"expected shape {tuple(shape)}, found {actual}")
        for name in self._arrays:
            if name not in expected_names:
                raise WeightShapeError(name, "not part of the configured architecture")

    def equals(self, other):
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[name].view(np.uint32), other[name].view(np.uint32)) for name in self)


def count_params(config):
    """Closed-form parameter count (independent of parameter_shapes)"""
    c, e = config.nc, config.ffn_expansion

    def conv(c_out, c_in, k):
        return c_out * c_in * k * k + c_out

    block = 4 * c + 2 * conv(2 * c, 2 * c, 1) + conv(2 * e * c, c, 1) + conv(c, e * c, 1)
    fie = conv(c, 3, 3) + config.fie_blocks * block + conv(3, c, 3)

    spatial = conv(2 * c, c, 3) + conv(c, c, 3)
    level = conv(4 * c, c, 1) + (conv(c, 2 * c, 3) if config.skip_mode is SkipMode.CONCAT else 0)
    denoiser = (conv(c, 6, 3) + 2 * conv(c, c, 3) + config.spatial_blocks * spatial
                + config.frequency_blocks * block + 2 * level + conv(3, c, 3))
    return int(fie + denoiser)


def _conv_flops(c_out, c_in, k, h, w):
    return 2.0 * c_out * c_in * k * k * h * w


def _fft_flops(channels, h, w):
    pixels = h * w
    return channels * 5.0 * pixels * math.log2(pixels) if pixels > 1 else 0.0


def _fie_block_flops(c, e, h, w):
    px = h * w
    fre = (_fft_flops(c, h, w) + 2 * _conv_flops(2 * c, 2 * c, 1, h, w) + 2 * c * px
           + _fft_flops(c, h, w))
    ffn = _conv_flops(2 * e * c, c, 1, h, w) + e * c * px + _conv_flops(c, e * c, 1, h, w)
    return 2 * c * px + fre + ffn + 2 * c * px


def count_flops(config, height, width):
    """
    Analytic FLOPs for one image: one multiply-accumulate = 2 FLOPs, each
    transform 5 N log2 N per channel, element-wise ops one per element.
    """
    if height < 16 or width < 16:
        raise ArgumentError(f"count_flops needs H,W >= 16, got {height}x{width}")
    c, e = config.nc, config.ffn_expansion

    # illumination stage
    h2, w2 = height // 2, width // 2
    full = 3 * height * width
    fie = 3 * h2 * w2 + _conv_flops(c, 3, 3, h2, w2)
    fie += config.fie_blocks * _fie_block_flops(c, e, h2, w2)
    fie += _conv_flops(3, c, 3, h2, w2) + 2 * 3 * h2 * w2
    fie += 2 * full  # upsample + symmetrise
    fie += _fft_flops(3, height, width) + 2 * full + full + 2 * full + _fft_flops(3, height, width) + full

    # denoiser on the padded grid
    hp, wp = height + (-height % 4), width + (-width % 4)
    hh, wh, hq, wq = hp // 2, wp // 2, hp // 4, wp // 4
    den = 5 * hp * wp
    den += _conv_flops(c, 6, 3, hp, wp) + _conv_flops(c, c, 3, hh, wh) + _conv_flops(c, c, 3, hq, wq)
    den += config.spatial_blocks * (_conv_flops(2 * c, c, 3, hq, wq) + c * hq * wq
                                    + _conv_flops(c, c, 3, hq, wq) + c * hq * wq)
    den += config.frequency_blocks * _fie_block_flops(c, e, hq, wq)
    den += hq * wq + 3 * c * hq * wq
    for (h_in, w_in), (h_out, w_out) in (((hq, wq), (hh, wh)), ((hh, wh), (hp, wp))):
        den += _conv_flops(4 * c, c, 1, h_in, w_in)
        if config.skip_mode is SkipMode.CONCAT:
            den += _conv_flops(c, 2 * c, 3, h_out, w_out)
        else:
            den += c * h_out * w_out
    den += _conv_flops(3, c, 3, hp, wp) + 2 * 3 * hp * wp
    return float(fie + den)


def ablation_grid(height=256, width=256):
    """Params and FLOPs for NC in {16, 32, 64} under both skip modes"""
    rows = []
    for mode in SkipMode:
        for nc in ABLATION_WIDTHS:
            config = ModelConfig(nc=nc, skip_mode=mode)
            params = count_params(config)
            rows.append({
                'nc': nc,
                'skip_mode': mode.value,
                'params': params,
                'params_m': params / 1e6,
                'flops_g': count_flops(config, height, width) / 1e9,
            })
    return pd.DataFrame(rows)


def run_model(x, params, config, module_map=None):
    """Both stages on tensors; keeps unclipped outputs for the gradient path"""
    illumination = enhance_illumination(x, params, config.fie_blocks, module_map=module_map)
    denoised = run_denoiser(x, illumination.x_lol_raw, params, config.skip_mode,
                            config.spatial_blocks, config.frequency_blocks, config.snr_blur)
    return ModelOutputs(illumination.x_lol, illumination.x_lol_raw, denoised.x_hat, denoised.x_hat_raw,
                        denoised.snr_map.values)


def forward(x, weights, config, module_map=None, workers=1):
    """
    Enhance a batch x (N,3,H,W in [0,1]). With workers > 1 the batch is split
    across threads; every image is processed independently either way.
    """
    weights.validate(config)
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    if data.ndim != 4 or data.shape[1] != 3:
        raise DimensionError(f"forward expects N,3,H,W input, got shape {data.shape}")
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise ArgumentError("forward expects input values in [0, 1]")
    params = weights.tensors()

    def run(chunk):
        outputs = run_model(Tensor(chunk), params, config, module_map=module_map)
        return outputs.x_lol, outputs.x_hat, outputs.snr_map

    if workers <= 1 or data.shape[0] < 2:
        x_lol, x_hat, snr = run(data)
        return EnhanceResult(x_lol, x_hat, snr)

    chunks = [chunk for chunk in np.array_split(data, min(workers, data.shape[0])) if len(chunk)]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    return EnhanceResult(*(concat([part[i] for part in parts], axis=0) for i in range(3)))


def save_weights(weights, path):
    """Text manifest (one line per tensor) followed by a little-endian f32 blob"""
    manifest = weights.manifest()
    lines = [f'{WEIGHTS_MAGIC} {len(manifest)} {weights.total_bytes}']
    for entry in manifest:
        lines.append(f"{entry.name} {'x'.join(str(d) for d in entry.shape)} {entry.byte_offset}")
    header = ('\n'.join(lines) + '\n').encode('ascii')
    blob = b''.join(np.ascontiguousarray(weights[entry.name], dtype='<f4').tobytes() for entry in manifest)
    Path(path).write_bytes(header + blob)


def _parse_manifest_line(line, index):
    parts = line.decode('ascii', errors='replace').split()
    if len(parts) != 3:
        raise ManifestError(f"manifest line {index + 1} is malformed: {line[:80]!r}")
    name, dims, offset = parts
    try:
        shape = tuple(int(d) for d in dims.split('x'))
        offset = int(offset)
    except ValueError:
        raise ManifestError(f"manifest line {index + 1} has non-integer fields: {line[:80]!r}") from None
    if any(d < 1 for d in shape) or offset < 0:
        raise ManifestError(f"manifest line {index + 1} has invalid extents or offset")
    return ManifestEntry(name, shape, offset)


def load_weights(path, config=None):
    """Read a weight file; validates against `config` when given"""
    data = Path(path).read_bytes()
    if not data:
        raise ManifestError(f"weight file '{path}' is empty")
    first, _, rest = data.partition(b'\n')
    header = first.decode('ascii', errors='replace').split()
    if len(header) != 3 or header[0] != WEIGHTS_MAGIC:
        raise ManifestError(f"weight file '{path}' does not start with a {WEIGHTS_MAGIC} header")
    try:
        count, blob_bytes = int(header[1]), int(header[2])
    except ValueError:
        raise ManifestError(f"weight file '{path}' has a malformed header") from None

    pieces = rest.split(b'\n', count)
    if len(pieces) < count + 1:
        raise ManifestError(f"weight file '{path}' manifest ends after {len(pieces) - 1} of {count} entries")
    entries = [_parse_manifest_line(line, i) for i, line in enumerate(pieces[:count])]
    blob = pieces[count]

    expected_offset = 0
    seen = set()
    for entry in entries:
        if entry.name in seen:
            raise ManifestError(f"duplicate tensor name '{entry.name}'")
        seen.add(entry.name)
        if entry.byte_offset != expected_offset:
            raise ManifestError(f"tensor '{entry.name}' offset {entry.byte_offset} overlaps or leaves a gap "
                                f"(expected {expected_offset})")
        expected_offset += entry.nbytes
    if expected_offset != blob_bytes:
        raise ManifestError(f"manifest covers {expected_offset} bytes but declares {blob_bytes}")
    if len(blob) < blob_bytes:
        raise TruncatedWeightsError(f"weight blob has {len(blob)} of {blob_bytes} bytes")
    if len(blob) > blob_bytes:
        raise ManifestError(f"weight blob has {len(blob) - blob_bytes} trailing bytes")

    arrays = []
    for entry in entries:
        count_values = int(np.prod(entry.shape))
        values = np.frombuffer(blob, dtype='<f4', count=count_values, offset=entry.byte_offset)
        arrays.append((entry.name, values.astype(np.float32).reshape(entry.shape)))
    store = WeightStore(arrays)
    if config is not None:
        store.validate(config)
    return store


def identity_map_bias(epsilon=MAP_EPSILON):
    """Head bias that makes a zero-weight map head output exactly 1"""
    return float(np.log(np.expm1(1.0 - epsilon)))
