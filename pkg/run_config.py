"""
Plain-text run configuration.

One `key = value` per line, `#` starts a comment. Keys are ModelConfig or
OptimizerConfig field names, or one of the run extras below. A `preset`
key selects a ModelConfig preset that later model keys refine.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from errors import ConfigError, EnhanceError
from model_runtime import ModelConfig
from training_loop import OptimizerConfig

EXTRA_DEFAULTS = {
    'seed': 0,
    'perceptual': 'sobel',
    'val_fraction': 0.1,
    'eval_every': 0,
    'workers': 1,
}

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
OPTIMIZER_KEYS = {f.name for f in fields(OptimizerConfig)}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    extras: dict = field(default_factory=lambda: dict(EXTRA_DEFAULTS))


def _coerce(value, like):
    if isinstance(like, bool):
        return value.lower() in ('1', 'true', 'yes', 'on')
    if isinstance(like, int):
        return int(float(value)) if value.lower().count('e') else int(value)
    if isinstance(like, float):
        return float(value)
    return value


def parse_config(text, source='<config>'):
    model_values, optimizer_values = {}, {}
    extras = dict(EXTRA_DEFAULTS)
    preset = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        if key == 'preset':
            preset = value
        elif key in MODEL_KEYS:
            model_values[key] = value
        elif key in OPTIMIZER_KEYS:
            optimizer_values[key] = value
        elif key in extras:
            try:
                extras[key] = _coerce(value, EXTRA_DEFAULTS[key])
            except ValueError:
                raise ConfigError(f"{source}:{number}: invalid value {value!r} for '{key}'") from None
        else:
            raise ConfigError(f"{source}:{number}: unknown key '{key}'")

    try:
        base = ModelConfig.preset(preset).to_dict() if preset else {}
        base.update(model_values)
        model = ModelConfig.from_dict(base)
        optimizer = OptimizerConfig.from_dict(optimizer_values)
    except (ValueError, EnhanceError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(model, optimizer, extras)


def load_config(path):
    """Read a config file; a missing path is a ConfigError"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text, str(path))


def format_config(config):
    """Inverse of parse_config"""
    lines = [f'{key} = {value}' for key, value in config.model.to_dict().items()]
    lines += [f'{f.name} = {getattr(config.optimizer, f.name)}' for f in fields(OptimizerConfig)]
    lines += [f'{key} = {value}' for key, value in config.extras.items()]
    return '\n'.join(lines) + '\n'
