import pandas as pd
import pytest

from bench_harness import (
    DEFAULT_RESOLUTIONS, MIN_ITERATIONS, MIN_WARMUP, BenchmarkRunner, environment_descriptor, parse_resolutions,
)
from errors import ArgumentError
from model_runtime import ModelConfig, count_flops
from run_logger import RunLogger, read_records


class TestParseResolutions:
    def test_list(self):
        assert parse_resolutions('640x480, 1280X720') == [(640, 480), (1280, 720)]

    @pytest.mark.parametrize('text', ['', '640', '640x', 'axb', '8x8', '640x480,12x64'])
    def test_invalid(self, text):
        with pytest.raises(ArgumentError):
            parse_resolutions(text)


class TestBenchmarkRunner:
    def test_small_resolutions(self, tiny_config, tiny_weights):
        logger = RunLogger()
        runner = BenchmarkRunner(tiny_config, tiny_weights, logger=logger)
        runner.add_resolution(32, 16)
        runner.add_resolution(64, 32)
        report = runner.run_batch()

        rows = report.rows
        assert list(rows['width']) == [32, 64] and list(rows['height']) == [16, 32]
        assert list(rows['iterations']) == [MIN_ITERATIONS] * 2
        assert (rows['p95_ms'] >= rows['p50_ms']).all()
        assert rows['flops_g'].iloc[1] == pytest.approx(count_flops(tiny_config, 32, 64) / 1e9)

        stats = logger.get_summary_statistics()
        assert stats['bench_samples'] == 2 * MIN_ITERATIONS
        assert stats['bench_warmup_samples'] == 2 * MIN_WARMUP

    def test_short_runs_are_clamped_with_a_warning(self, tiny_config, tiny_weights):
        logger = RunLogger()
        runner = BenchmarkRunner(tiny_config, tiny_weights, warmup=1, iterations=3, logger=logger)
        assert (runner.warmup, runner.iterations) == (MIN_WARMUP, MIN_ITERATIONS)
        assert logger.warning_count == 2
        assert set(logger.get_warning_dataframe()['item']) == {'warmup', 'iterations'}

    def test_data_parallel_mode(self, tiny_config, tiny_weights):
        runner = BenchmarkRunner(tiny_config, tiny_weights, workers=2)
        runner.add_resolution(16, 16)
        report = runner.run_batch()
        assert report.environment['mode'] == 'data-parallel'
        assert report.environment['workers'] == 2

    def test_report_roundtrip(self, tmp_path, tiny_config, tiny_weights):
        runner = BenchmarkRunner(tiny_config, tiny_weights, threads=1)
        runner.add_resolution(16, 16)
        runner.add_resolution(32, 32)
        report = runner.run_batch()
        path = tmp_path / 'bench.tsv'
        report.write(path)

        rows, comments = read_records(path)
        assert comments['threads'] == 1
        assert comments['mode'] == 'single'
        assert 'blas' in comments and 'cpu' in comments
        pd.testing.assert_frame_equal(rows, report.rows, check_dtype=False)

    def test_progress_reaches_one(self, tiny_config, tiny_weights):
        runner = BenchmarkRunner(tiny_config, tiny_weights)
        runner.add_resolution(16, 16)
        seen = []
        runner.run_batch(progress_callback=seen.append)
        assert seen == [0.0, 1.0]

    def test_environment_descriptor(self):
        env = environment_descriptor(threads=4, workers=1)
        assert env['threads'] == 4 and env['mode'] == 'single'
        assert env['cpu_count'] >= 1

    @pytest.mark.slow
    def test_default_resolutions_scale_with_pixels(self):
        config = ModelConfig()
        report = BenchmarkRunner(config).run_batch()
        assert [(w, h) for w, h in zip(report.rows['width'], report.rows['height'])] == DEFAULT_RESOLUTIONS
        assert report.ratios()['within_band'].all()
        assert 0.7 <= report.scaling()['exponent'] <= 1.3
