"""
Optimisation: Adam with a cosine learning-rate schedule, batch prefetching
and the seeded end-to-end training loop.
"""

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from degradation import augment_pair
from errors import ArgumentError, DatasetError, LossTermError, NonFiniteError, TrainingDivergedError
from losses import DEFAULT_LAMBDA, total_loss
from model_runtime import WeightStore, run_model, save_weights
from quality_metrics import psnr
from tensor_core import GradTape, Tensor


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr_max: float = 4e-4
    lr_min: float = 1e-6
    total_steps: int = 2000
    batch: int = 8
    crop: int = 64
    lambda_perceptual: float = DEFAULT_LAMBDA
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.lr_min <= self.lr_max:
            raise ArgumentError(f"need 0 < lr_min <= lr_max, got {self.lr_min} and {self.lr_max}")
        for name in ('beta1', 'beta2'):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1), got {value}")
        if self.total_steps < 1:
            raise ArgumentError(f"total_steps must be positive, got {self.total_steps}")
        if self.batch < 1:
            raise ArgumentError(f"batch must be positive, got {self.batch}")
        if self.crop < 16:
            raise ArgumentError(f"crop must be at least 16, got {self.crop}")
        if self.lambda_perceptual < 0:
            raise ArgumentError(f"lambda_perceptual must be non-negative, got {self.lambda_perceptual}")

    @classmethod
    def from_dict(cls, config):
        defaults = cls()
        return cls(**{
            name: type(default)(config.get(name, default))
            for name, default in asdict(defaults).items()
        })

    @classmethod
    def full_scale(cls, total_steps=2000):
        """Batch 32 on 256 x 256 crops"""
        return cls(total_steps=total_steps, batch=32, crop=256)


def cosine_lr(step, config):
    """lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2; clamped outside [0, T]"""
    t = min(max(step, 0), config.total_steps)
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + math.cos(math.pi * t / config.total_steps))


class Adam:
    """Bias-corrected Adam over a dict of trainable tensors"""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.first_moment = {name: np.zeros(p.shape) for name, p in params.items()}
        self.second_moment = {name: np.zeros(p.shape) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr):
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)


def gradient_norm(params):
    total = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values() if p.grad is not None)
    return math.sqrt(total)


def make_batch(pairs, step, config, seed):
    """Batch for `step`; its randomness depends only on (seed, step)"""
    rng = np.random.default_rng([seed, step])
    picks = rng.integers(0, len(pairs), size=config.batch)
    lows, highs = zip(*(augment_pair(pairs[i], config.crop, rng) for i in picks))
    return np.stack(lows), np.stack(highs)


class BatchPrefetcher:
    """Iterates over batches for steps [start, stop), built ahead on worker threads"""

    def __init__(self, pairs, config, seed, start, stop, workers=1, depth=4):
        self.pairs = pairs
        self.config = config
        self.seed = seed
        self.start = start
        self.stop = stop
        self.workers = max(1, workers)
        self.depth = max(depth, self.workers)

    def __iter__(self):
        if self.workers == 1:
            for step in range(self.start, self.stop):
                yield step, make_batch(self.pairs, step, self.config, self.seed)
            return
        pending = deque()
        steps = iter(range(self.start, self.stop))
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for step in steps:
                pending.append((step, pool.submit(make_batch, self.pairs, step, self.config, self.seed)))
                if len(pending) >= self.depth:
                    break
            while pending:
                step, future = pending.popleft()
                next_step = next(steps, None)
                if next_step is not None:
                    pending.append((next_step, pool.submit(make_batch, self.pairs, next_step, self.config, self.seed)))
                yield step, future.result()


@dataclass
class TrainResult:
    weights: WeightStore
    best_weights: WeightStore
    best_psnr: float = None
    best_step: int = None
    history: list = field(default_factory=list)


def split_dataset(pairs, val_fraction, seed):
    if val_fraction <= 0 or len(pairs) < 2:
        return list(pairs), []
    val_count = min(len(pairs) - 1, max(1, int(round(val_fraction * len(pairs)))))
    train, val = train_test_split(list(pairs), test_size=val_count, random_state=seed, shuffle=True)
    return train, val


def validate(params, model_config, pairs):
    """Mean PSNR of the enhanced validation images"""
    scores = []
    for pair in pairs:
        outputs = run_model(Tensor(pair.low[None]), params, model_config)
        scores.append(psnr(outputs.x_hat.data[0], pair.high))
    return float(np.mean(scores))


def train_loop(dataset, model_config, opt_config, out_path=None, seed=0, logger=None, val_fraction=0.1,
               eval_every=None, workers=1, perceptual='sobel', initial_weights=None, progress_callback=None,
               final_out_path=None):
    """
    Train both stages end to end on random crops with flips and rotations.

    Runs are reproducible for a given seed. Every `eval_every` steps (and at
    the end) the model is scored on the held-out split; the best-scoring
    weights are kept and written to `out_path`. The last step's weights are
    written only when `final_out_path` is given.
    """
    if not dataset:
        raise DatasetError("cannot train on an empty dataset")
    train_pairs, val_pairs = split_dataset(dataset, val_fraction, seed)
    weights = initial_weights if initial_weights is not None else WeightStore.initialize(model_config, seed=seed)
    weights.validate(model_config)
    params = weights.tensors(requires_grad=True)
    optimizer = Adam(params, opt_config.beta1, opt_config.beta2, opt_config.adam_eps)
    eval_every = eval_every or max(1, opt_config.total_steps // 10)

    best_psnr, best_step, best_weights = None, None, weights
    history = []
    total = opt_config.total_steps

    for step, (low, high) in BatchPrefetcher(train_pairs, opt_config, seed, 0, total, workers):
        if progress_callback:
            progress_callback(step / total)
        lr = cosine_lr(step, opt_config)
        optimizer.zero_grad()
        with GradTape() as tape:
            try:
                outputs = run_model(Tensor(low), params, model_config)
            except NonFiniteError as exc:
                raise TrainingDivergedError(step, 'forward', exc.op_name) from exc
            try:
                breakdown = total_loss(outputs.x_hat_raw, outputs.x_lol_raw, Tensor(high),
                                       opt_config.lambda_perceptual, perceptual)
            except LossTermError as exc:
                raise TrainingDivergedError(step, exc.term, exc.op_name) from exc
        try:
            tape.backward(breakdown.total)
        except NonFiniteError as exc:
            raise TrainingDivergedError(step, 'backward', exc.op_name) from exc
        values = breakdown.as_dict()

        grad_norm = gradient_norm(params)
        optimizer.step(lr)
        history.append(values['total'])
        if logger:
            logger.log_step(step, lr, breakdown, grad_norm)

        if val_pairs and ((step + 1) % eval_every == 0 or step + 1 == total):
            score = validate(params, model_config, val_pairs)
            is_best = best_psnr is None or score > best_psnr
            if is_best:
                best_psnr, best_step = score, step
                best_weights = WeightStore.from_tensors(params)
            if logger:
                logger.log_validation(step, score, is_best)

    if progress_callback:
        progress_callback(1.0)

    final_weights = WeightStore.from_tensors(params)
    if not val_pairs:
        best_weights = final_weights
    if out_path is not None:
        save_weights(best_weights, Path(out_path))
    if final_out_path is not None:
        save_weights(final_weights, Path(final_out_path))
    return TrainResult(final_weights, best_weights, best_psnr, best_step, history)
