from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd


class RunLogger:
    """Record logging for training, evaluation and benchmark runs"""

    def __init__(self):
        self.reset()

    def reset(self):
        """Reset all logs for a new run"""
        self.step_logs = []
        self.validation_logs = []
        self.warning_logs = []
        self.bench_logs = []
        self.eval_logs = []

    def log_step(self, step, lr, breakdown, grad_norm):
        """Log one optimizer step with its loss breakdown"""
        record = {'step': step, 'lr': lr}
        record.update(breakdown.as_dict())
        record['grad_norm'] = grad_norm
        self.step_logs.append(record)

    def log_validation(self, step, psnr, is_best):
        self.validation_logs.append({'step': step, 'psnr': psnr, 'is_best': bool(is_best)})

    def log_warning(self, source, item, reason):
        """Log a skipped file or clamped argument"""
        self.warning_logs.append({
            'source': source,
            'item': str(item),
            'reason': reason,
            'timestamp': datetime.now(),
        })

    def log_bench_sample(self, width, height, iteration, ms, warmup):
        self.bench_logs.append({
            'width': width,
            'height': height,
            'iteration': iteration,
            'ms': ms,
            'warmup': bool(warmup),
        })

    def log_eval_image(self, image_id, psnr, ssim):
        self.eval_logs.append({'id': image_id, 'psnr': psnr, 'ssim': ssim})

    @property
    def warning_count(self):
        return len(self.warning_logs)

    def get_step_dataframe(self):
        """Get step logs as pandas DataFrame"""
        if not self.step_logs:
            return pd.DataFrame()
        return pd.DataFrame(self.step_logs)

    def get_training_log_dataframe(self):
        """Step logs with the validation PSNR of each step, NaN where none ran"""
        step_df = self.get_step_dataframe()
        if step_df.empty:
            return step_df
        val_df = self.get_validation_dataframe()
        if val_df.empty:
            return step_df.assign(psnr=np.nan)
        return step_df.merge(val_df[['step', 'psnr']], on='step', how='left')

    def get_validation_dataframe(self):
        if not self.validation_logs:
            return pd.DataFrame()
        return pd.DataFrame(self.validation_logs)

    def get_warning_dataframe(self):
        if not self.warning_logs:
            return pd.DataFrame()
        return pd.DataFrame(self.warning_logs)

    def get_bench_dataframe(self):
        if not self.bench_logs:
            return pd.DataFrame()
        return pd.DataFrame(self.bench_logs)

    def get_eval_dataframe(self):
        if not self.eval_logs:
            return pd.DataFrame()
        return pd.DataFrame(self.eval_logs)

    def get_summary_statistics(self):
        """Get overall summary statistics"""
        step_df = self.get_step_dataframe()
        val_df = self.get_validation_dataframe()
        bench_df = self.get_bench_dataframe()

        stats = {'warnings': self.warning_count}

        if not step_df.empty:
            stats['steps'] = len(step_df)
            stats['initial_loss'] = step_df['total'].iloc[0]
            stats['final_loss'] = step_df['total'].iloc[-1]
            stats['loss_ratio'] = stats['final_loss'] / max(stats['initial_loss'], 1e-12)
            stats['mean_grad_norm'] = step_df['grad_norm'].mean()

        if not val_df.empty:
            stats['validations'] = len(val_df)
            stats['best_val_psnr'] = val_df['psnr'].max()
            stats['best_val_step'] = int(val_df.loc[val_df['psnr'].idxmax(), 'step'])

        if not bench_df.empty:
            timed = bench_df[~bench_df['warmup']]
            stats['bench_samples'] = len(timed)
            stats['bench_warmup_samples'] = int(bench_df['warmup'].sum())

        return stats


def _format_value(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value).replace('\t', ' ').replace('\n', ' ')


def write_records(df, path, comments=None):
    """
    Write a DataFrame as tab-separated line records with a one-line header.
    `comments` become leading '# key=value' lines (environment descriptors).
    """
    lines = [f'# {key}={_format_value(value)}' for key, value in (comments or {}).items()]
    lines.append('\t'.join(str(column) for column in df.columns))
    for row in df.itertuples(index=False):
        lines.append('\t'.join(_format_value(value) for value in row))
    Path(path).write_text('\n'.join(lines) + '\n')


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ('True', 'False'):
        return text == 'True'
    return text


def read_records(path):
    """Parse a file written by write_records; returns (DataFrame, comments)"""
    comments = {}
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        if line.startswith('# ') and header is None:
            key, _, value = line[2:].partition('=')
            comments[key] = _parse_value(value)
            continue
        fields = line.split('\t')
        if header is None:
            header = fields
            continue
        rows.append([_parse_value(field) for field in fields])
    return pd.DataFrame(rows, columns=header or []), comments
