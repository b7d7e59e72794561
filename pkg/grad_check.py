"""Central finite-difference validation of backward rules"""

import numpy as np

from errors import ArgumentError, GradCheckError
from tensor_core import GradTape, Tensor, precision

METRICS = ('elementwise', 'norm')


def _scalar_loss(op_under_test, arrays, projection):
    with precision('float64'):
        leaves = {name: Tensor(arr) for name, arr in arrays.items()}
        out = op_under_test(**leaves).data.astype(np.float64)
    return float(np.sum(out * projection))


def _relative_error(analytic, numeric, metric, floor):
    if metric == 'norm':
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
        return float(np.linalg.norm(analytic - numeric) / denom)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(op_under_test, inputs, tolerance=1e-3, h=1e-3, seed=0, max_coords=None,
               projection='ones', metric='elementwise', floor=1e-8):
    """
    Compare analytic and central-difference gradients of `op_under_test`.

    `inputs` maps argument names to shapes (filled with seeded normal samples)
    or to explicit arrays. The op's output is reduced to a scalar as
    sum(output * w), with w all ones by default or a seeded random weighting
    for projection='random'. Every coordinate of every input is differentiated
    unless `max_coords` is set, in which case larger tensors are checked on a
    seeded subset of that many coordinates.

    The default metric is the largest per-coordinate error
    |a - n| / max(|a|, |n|, floor). metric='norm' reports
    ||a - n|| / max(||a||, ||n||, floor) per input instead.
    Returns the worst error over inputs. Raises GradCheckError naming the
    input when a gradient is non-finite or the error exceeds `tolerance`.
    """
    if metric not in METRICS:
        raise ArgumentError(f"metric must be one of {METRICS}, got {metric!r}")
    if projection not in ('ones', 'random'):
        raise ArgumentError(f"projection must be 'ones' or 'random', got {projection!r}")

    rng = np.random.default_rng(seed)
    arrays = {}
    for name, spec in inputs.items():
        if isinstance(spec, tuple):
            arrays[name] = rng.standard_normal(spec)
        else:
            arrays[name] = np.array(spec, dtype=np.float64)

    with precision('float64'):
        leaves = {name: Tensor(arr, requires_grad=True, name=name) for name, arr in arrays.items()}
        with GradTape() as tape:
            out = op_under_test(**leaves)
        weights = rng.standard_normal(out.shape) if projection == 'random' else np.ones(out.shape)
        with tape:
            loss = (out * Tensor(weights)).sum()
        tape.backward(loss)

    worst = 0.0
    worst_name = None
    for name, base in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError(name, "analytic gradient is not finite")

        if max_coords is None or base.size <= max_coords:
            coords = np.arange(base.size)
        else:
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))

        numeric = np.empty(len(coords))
        for k, flat in enumerate(coords):
            shifted = dict(arrays)
            plus = base.copy()
            plus.flat[flat] += h
            shifted[name] = plus
            f_plus = _scalar_loss(op_under_test, shifted, weights)
            minus = base.copy()
            minus.flat[flat] -= h
            shifted[name] = minus
            f_minus = _scalar_loss(op_under_test, shifted, weights)
            numeric[k] = (f_plus - f_minus) / (2.0 * h)

        picked = analytic.reshape(-1)[coords].astype(np.float64)
        if not np.all(np.isfinite(numeric)):
            raise GradCheckError(name, "numeric gradient is not finite")
        error = _relative_error(picked, numeric, metric, floor)
        if error > worst:
            worst, worst_name = error, name

    if tolerance is not None and worst > tolerance:
        raise GradCheckError(worst_name, f"relative error {worst:.3e} exceeds {tolerance:.1e}")
    return worst
