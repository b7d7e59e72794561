import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_info, threadpool_limits

from errors import ArgumentError
from model_runtime import WeightStore, count_flops, forward
from run_logger import write_records
from scaling_analysis import consecutive_ratios, perform_scaling_regression

DEFAULT_RESOLUTIONS = [(640, 480), (1280, 720), (1920, 1080), (2560, 1440)]
MIN_WARMUP = 5
MIN_ITERATIONS = 30


def parse_resolutions(text):
    """'640x480,1280x720' -> [(640, 480), (1280, 720)]"""
    resolutions = []
    for item in text.split(','):
        item = item.strip().lower()
        if not item:
            continue
        width, sep, height = item.partition('x')
        try:
            resolution = (int(width), int(height))
        except ValueError:
            raise ArgumentError(f"cannot parse resolution '{item}', expected WxH") from None
        if not sep or min(resolution) < 16:
            raise ArgumentError(f"resolution '{item}' must be WxH with both sides >= 16")
        resolutions.append(resolution)
    if not resolutions:
        raise ArgumentError("no resolutions given")
    return resolutions


def environment_descriptor(threads, workers):
    """CPU, thread and BLAS build information recorded with every report"""
    blas = [f"{info.get('internal_api')}:{info.get('version')}" for info in threadpool_info()]
    return {
        'cpu': platform.processor() or platform.machine(),
        'machine': platform.machine(),
        'cpu_count': os.cpu_count(),
        'threads': threads,
        'mode': 'data-parallel' if workers > 1 else 'single',
        'workers': workers,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'blas': ';'.join(blas) or 'unknown',
        'timestamp': datetime.now().isoformat(timespec='seconds'),
    }


@dataclass
class BenchReport:
    rows: pd.DataFrame
    environment: dict = field(default_factory=dict)

    def scaling(self):
        return perform_scaling_regression(self.rows)

    def ratios(self):
        return consecutive_ratios(self.rows)

    def write(self, path):
        write_records(self.rows, path, comments=self.environment)


class BenchmarkRunner:
    """Single-image latency over a set of resolutions"""

    def __init__(self, config, weights=None, warmup=MIN_WARMUP, iterations=MIN_ITERATIONS, threads=1,
                 workers=1, seed=0, logger=None):
        self.config = config
        self.weights = weights if weights is not None else WeightStore.initialize(config, seed=seed)
        self.threads = threads
        self.workers = workers
        self.seed = seed
        self.logger = logger
        self.resolutions = []
        self.warmup = self._at_least('warmup', warmup, MIN_WARMUP)
        self.iterations = self._at_least('iterations', iterations, MIN_ITERATIONS)

    def _at_least(self, name, value, minimum):
        if value < minimum:
            if self.logger:
                self.logger.log_warning('bench', name, f'raised from {value} to {minimum}')
            return minimum
        return value

    def add_resolution(self, width, height):
        self.resolutions.append((int(width), int(height)))

    def run_batch(self, progress_callback=None):
        """Benchmark every added resolution (the default set if none)"""
        resolutions = self.resolutions or list(DEFAULT_RESOLUTIONS)
        rows = []
        with threadpool_limits(limits=self.threads):
            for idx, (width, height) in enumerate(resolutions):
                if progress_callback:
                    progress_callback(idx / len(resolutions))
                rows.append(self._run_single_resolution(width, height))
        if progress_callback:
            progress_callback(1.0)
        return BenchReport(pd.DataFrame(rows), environment_descriptor(self.threads, self.workers))

    def _run_single_resolution(self, width, height):
        rng = np.random.default_rng([self.seed, width, height])
        # one image, or one per worker in data-parallel mode
        batch = self.workers if self.workers > 1 else 1
        x = rng.random((batch, 3, height, width), dtype=np.float32)

        samples = []
        for iteration in range(self.warmup + self.iterations):
            start = time.perf_counter()
            forward(x, self.weights, self.config, workers=self.workers)
            elapsed = (time.perf_counter() - start) * 1000.0
            warmup = iteration < self.warmup
            if not warmup:
                samples.append(elapsed)
            if self.logger:
                self.logger.log_bench_sample(width, height, iteration, elapsed, warmup)

        return self._aggregate_samples(width, height, samples)

    def _aggregate_samples(self, width, height, samples):
        samples = np.asarray(samples)
        return {
            'width': width,
            'height': height,
            'flops_g': count_flops(self.config, height, width) / 1e9,
            'mean_ms': float(np.mean(samples)),
            'p50_ms': float(np.percentile(samples, 50)),
            'p95_ms': float(np.percentile(samples, 95)),
            'std_ms': float(np.std(samples)),
            'iterations': len(samples),
        }
