"""
Command-line interface.

    enhance  --input P --output P --weights P [--config P] [--emit-intermediates]
    train    (--low-dir P --high-dir P | --synthetic N) --out P [--final-out P] [--log P]
             [--config P] [--steps N] [--seed N]
    eval     --low-dir P --high-dir P --weights P --report P [--config P]
    bench    --report P [--config P] [--resolutions WxH,...] [--iters N]
    ablation [--size HxW]

Exit codes: 0 success, 1 usage or config error, 2 unreadable input,
3 missing or mismatched weights, 4 empty dataset.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from matplotlib import colormaps

from bench_harness import BenchmarkRunner, parse_resolutions
from degradation import build_synthetic_dataset, load_paired_dataset, read_png, write_png
from errors import DatasetError, EnhanceError, ImageReadError, WeightLoadError
from evaluation import evaluate_pairs
from model_runtime import ablation_grid, forward, load_weights
from run_config import RunConfig, load_config
from run_logger import RunLogger, write_records
from scaling_analysis import create_scaling_plot
from training_loop import train_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_WEIGHTS = 3
EXIT_DATASET = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args):
    return load_config(args.config) if args.config else RunConfig()


def _weights(path, config):
    if not Path(path).is_file():
        raise WeightLoadError(f"weights file '{path}' not found")
    return load_weights(path, config)


def _suffixed(path, suffix):
    path = Path(path)
    return path.with_name(f'{path.stem}_{suffix}{path.suffix or ".png"}')


def cmd_enhance(args):
    run = _config(args)
    image = read_png(args.input)
    weights = _weights(args.weights, run.model)
    result = forward(image[None], weights, run.model, workers=run.extras['workers'])
    write_png(args.output, result.x_hat.data[0])
    if args.emit_intermediates:
        write_png(_suffixed(args.output, 'lol'), result.x_lol.data[0])
        snr = result.snr_map.data[0, 0]
        write_png(_suffixed(args.output, 'snr'), colormaps['viridis'](snr)[..., :3])
    print(f"enhanced {args.input} -> {args.output}")
    return EXIT_OK


def cmd_train(args):
    run = _config(args)
    optimizer = run.optimizer
    if args.steps:
        optimizer = replace(optimizer, total_steps=args.steps)
    seed = args.seed if args.seed is not None else run.extras['seed']
    logger = RunLogger()

    if args.synthetic:
        dataset = build_synthetic_dataset(args.synthetic, optimizer.crop, seed)
    elif args.low_dir and args.high_dir:
        dataset = load_paired_dataset(args.low_dir, args.high_dir, logger=logger)
    else:
        raise UsageError("train needs --low-dir/--high-dir or --synthetic")

    result = train_loop(dataset, run.model, optimizer, out_path=args.out, seed=seed, logger=logger,
                        val_fraction=run.extras['val_fraction'], eval_every=run.extras['eval_every'] or None,
                        workers=run.extras['workers'], perceptual=run.extras['perceptual'],
                        final_out_path=args.final_out)
    if args.log:
        write_records(logger.get_training_log_dataframe(), args.log)
    stats = logger.get_summary_statistics()
    print(f"trained {stats['steps']} steps: loss {stats['initial_loss']:.4f} -> {stats['final_loss']:.4f}")
    if result.best_psnr is not None:
        print(f"best validation PSNR {result.best_psnr:.2f} dB at step {result.best_step}")
    if logger.warning_count:
        print(f"{logger.warning_count} dataset warnings", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    run = _config(args)
    logger = RunLogger()
    pairs = load_paired_dataset(args.low_dir, args.high_dir, logger=logger)
    weights = _weights(args.weights, run.model)
    report = evaluate_pairs(pairs, weights, run.model, logger=logger)
    report.write(args.report)
    print(f"{len(report.rows)} images: PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")
    if logger.warning_count:
        print(f"{logger.warning_count} dataset warnings", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args):
    run = _config(args)
    weights = _weights(args.weights, run.model) if args.weights else None
    runner = BenchmarkRunner(run.model, weights=weights, warmup=args.warmup, iterations=args.iters,
                             threads=args.threads, workers=run.extras['workers'], seed=run.extras['seed'],
                             logger=RunLogger())
    resolutions = parse_resolutions(args.resolutions) if args.resolutions else []
    for width, height in resolutions:
        runner.add_resolution(width, height)
    report = runner.run_batch()
    report.write(args.report)
    if args.plot:
        create_scaling_plot(report.rows, report.scaling()).write_html(args.plot)
    for row in report.rows.itertuples():
        print(f"{row.width}x{row.height}: {row.flops_g:.2f} GFLOPs, mean {row.mean_ms:.1f} ms, "
              f"p95 {row.p95_ms:.1f} ms")
    return EXIT_OK


def cmd_ablation(args):
    try:
        height, width = (int(v) for v in args.size.lower().split('x'))
    except ValueError:
        raise UsageError(f"--size must be HxW, got '{args.size}'") from None
    print(ablation_grid(height, width).to_string(index=False))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog='flol', description='Two-stage Fourier low-light image enhancement')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    enhance = commands.add_parser('enhance', help='enhance one PNG')
    enhance.add_argument('--input', required=True)
    enhance.add_argument('--output', required=True)
    enhance.add_argument('--weights', required=True)
    enhance.add_argument('--config')
    enhance.add_argument('--emit-intermediates', action='store_true',
                         help='also write the intermediate image and the SNR map')
    enhance.set_defaults(handler=cmd_enhance)

    train = commands.add_parser('train', help='train on paired directories or synthetic pairs')
    train.add_argument('--low-dir', nargs='+')
    train.add_argument('--high-dir', nargs='+')
    train.add_argument('--synthetic', type=int, help='train on N generated pairs instead of directories')
    train.add_argument('--config')
    train.add_argument('--out', required=True)
    train.add_argument('--final-out', help="also write the last step's weights here")
    train.add_argument('--log', help='write the per-step training log here')
    train.add_argument('--steps', type=int)
    train.add_argument('--seed', type=int)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser('eval', help='score a paired dataset')
    evaluate.add_argument('--low-dir', nargs='+', required=True)
    evaluate.add_argument('--high-dir', nargs='+', required=True)
    evaluate.add_argument('--weights', required=True)
    evaluate.add_argument('--config')
    evaluate.add_argument('--report', required=True)
    evaluate.set_defaults(handler=cmd_eval)

    bench = commands.add_parser('bench', help='latency and FLOPs per resolution')
    bench.add_argument('--config')
    bench.add_argument('--weights', help='defaults to seeded random weights')
    bench.add_argument('--resolutions', help='comma-separated WxH list')
    bench.add_argument('--iters', type=int, default=30)
    bench.add_argument('--warmup', type=int, default=5)
    bench.add_argument('--threads', type=int, default=1)
    bench.add_argument('--report', required=True)
    bench.add_argument('--plot', help='write a scaling chart (HTML)')
    bench.set_defaults(handler=cmd_bench)

    ablation = commands.add_parser('ablation', help='params and FLOPs across widths and skip modes')
    ablation.add_argument('--size', default='256x256')
    ablation.set_defaults(handler=cmd_ablation)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ImageReadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WeightLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except EnhanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
