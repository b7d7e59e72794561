from dataclasses import dataclass

import numpy as np
import pandas as pd

from errors import DatasetError
from model_runtime import forward
from quality_metrics import psnr, ssim
from run_logger import write_records


@dataclass
class EvalReport:
    rows: pd.DataFrame

    @property
    def mean_psnr(self):
        return float(self.rows['psnr'].mean())

    @property
    def mean_ssim(self):
        return float(self.rows['ssim'].mean())

    def with_mean_row(self):
        mean = pd.DataFrame([{'id': 'mean', 'psnr': self.mean_psnr, 'ssim': self.mean_ssim}])
        return pd.concat([self.rows, mean], ignore_index=True)

    def write(self, path):
        write_records(self.with_mean_row(), path)


def evaluate_pairs(pairs, weights, config, logger=None, module_map=None, baseline=False):
    """
    PSNR/SSIM of the enhanced low images against their references, one row
    per pair. `baseline=True` scores the unprocessed low image instead.
    """
    if not pairs:
        raise DatasetError("nothing to evaluate")
    rows = []
    for pair in pairs:
        if baseline:
            output = pair.low
        else:
            output = forward(pair.low[None], weights, config, module_map=module_map).x_hat.data[0]
        row = {'id': pair.id, 'psnr': psnr(output, pair.high), 'ssim': ssim(output, pair.high)}
        rows.append(row)
        if logger:
            logger.log_eval_image(row['id'], row['psnr'], row['ssim'])
    return EvalReport(pd.DataFrame(rows, columns=['id', 'psnr', 'ssim']).astype({'psnr': np.float64}))
