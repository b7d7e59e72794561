"""
Dense tensors with reverse-mode differentiation.

Operations record themselves on the active GradTape (if any input requires a
gradient); `GradTape.backward` replays the records in reverse order and
accumulates gradients by addition. Without an active tape nothing is recorded,
which keeps inference free of bookkeeping.

Layout for image data is N x C x H x W, row-major. New tensors are float32
unless a `precision("float64")` block is active.
"""

import threading
from contextlib import contextmanager

import numpy as np

from errors import DimensionError, NonFiniteError

_state = threading.local()

CHECK_FINITE = True


def default_dtype():
    return getattr(_state, 'dtype', np.float32)


@contextmanager
def precision(dtype):
    """Switch the dtype of newly created tensors inside the block"""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


def _tape_stack():
    if not hasattr(_state, 'tapes'):
        _state.tapes = []
    return _state.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float array with optional gradient tracking"""

    def __init__(self, data, requires_grad=False, name=None, _keep_dtype=False):
        arr = np.asarray(data)
        if not _keep_dtype or arr.dtype.kind != 'f':
            arr = arr.astype(default_dtype(), copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, _keep_dtype=True)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class GradTape:
    """Ordered record of differentiable operations"""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, outputs, inputs, backward, op_name):
        self.records.append((outputs, inputs, backward, op_name))

    def backward(self, loss, grad=None):
        """Populate `.grad` on every tensor reachable from `loss`"""
        if grad is None:
            grad = np.ones_like(loss.data)
        loss._accumulate(grad)

        for outputs, inputs, backward_fn, op_name in reversed(self.records):
            if all(out.grad is None for out in outputs):
                continue
            upstream = [out.grad if out.grad is not None else np.zeros_like(out.data) for out in outputs]
            grads_in = backward_fn(*upstream)
            for inp, g in zip(inputs, grads_in):
                if inp is None or g is None or not inp.requires_grad:
                    continue
                if CHECK_FINITE and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"{op_name} (backward)")
                inp._accumulate(g)

    def __len__(self):
        return len(self.records)


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor(np.asarray(value, dtype=dtype), _keep_dtype=True)


def make_result(data, inputs, backward, op_name):
    """Wrap an op result and record it on the active tape"""
    return make_results((data,), inputs, backward, op_name)[0]


def make_results(datas, inputs, backward, op_name):
    requires_grad = any(inp is not None and inp.requires_grad for inp in inputs)
    outputs = []
    for data in datas:
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NonFiniteError(op_name)
        outputs.append(Tensor(data, requires_grad=requires_grad, _keep_dtype=True))
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(tuple(outputs), tuple(inputs), backward, op_name)
    return tuple(outputs)


def unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, 'add')


def sub(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, 'mul')


def div(a, b):
    a, b = _binary(a, b)
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), backward, 'div')


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,), 'neg')


def power(a, exponent):
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_result(a.data ** exponent, (a,), backward, 'power')


def sqrt(a):
    out = np.sqrt(a.data)

    def backward(g):
        return (np.where(out > 0, g * 0.5 / np.where(out > 0, out, 1.0), 0.0),)

    return make_result(out, (a,), backward, 'sqrt')


def absolute(a):
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), 'abs')


def cos(a):
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), 'cos')


def sin(a):
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), 'sin')


def hypot(a, b):
    """sqrt(a^2 + b^2); gradient taken as zero at the origin"""
    a, b = _binary(a, b)
    out = np.hypot(a.data, b.data)
    safe = np.where(out > 0, out, 1.0)

    def backward(g):
        scale = np.where(out > 0, g / safe, 0.0)
        return unbroadcast(scale * a.data, a.shape), unbroadcast(scale * b.data, b.shape)

    return make_result(out, (a, b), backward, 'hypot')


def atan2(y, x):
    """Angle in (-pi, pi]; zero at the origin"""
    y, x = _binary(y, x)
    out = np.arctan2(y.data, x.data)
    out = np.where(out <= -np.pi, np.pi, out).astype(y.dtype, copy=False)
    r2 = x.data * x.data + y.data * y.data
    safe = np.where(r2 > 0, r2, 1.0)

    def backward(g):
        scale = np.where(r2 > 0, g / safe, 0.0)
        return unbroadcast(scale * x.data, y.shape), unbroadcast(-scale * y.data, x.shape)

    return make_result(out, (y, x), backward, 'atan2')


def clip(a, low, high):
    out = np.clip(a.data, low, high)
    inside = (a.data >= low) & (a.data <= high)
    return make_result(out, (a,), lambda g: (g * inside,), 'clip')


def tensor_sum(a):
    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward, 'sum')


def tensor_mean(a):
    count = a.size

    def backward(g):
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward, 'mean')


def channel_mean(a):
    """Mean over axis 1, keeping the axis"""
    channels = a.shape[1]

    def backward(g):
        return (np.broadcast_to(g / channels, a.shape).copy(),)

    return make_result(a.data.mean(axis=1, keepdims=True), (a,), backward, 'channel_mean')


def reshape(a, shape):
    original = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), 'reshape')


def concat(tensors, axis=1):
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(data, tuple(tensors), backward, 'concat')


def split_channels(a, sections=2):
    """Split along axis 1 into equal parts"""
    channels = a.shape[1]
    if channels % sections:
        raise DimensionError(f"cannot split {channels} channels into {sections} equal parts")
    width = channels // sections
    parts = tuple(a.data[:, i * width:(i + 1) * width] for i in range(sections))

    def backward(*grads):
        return (np.concatenate(grads, axis=1),)

    return make_results(parts, (a,), backward, 'split_channels')


def crop(a, height, width):
    """Keep the top-left height x width window of an N,C,H,W tensor"""
    full = a.shape

    def backward(g):
        grad = np.zeros(full, dtype=g.dtype)
        grad[:, :, :height, :width] = g
        return (grad,)

    return make_result(a.data[:, :, :height, :width], (a,), backward, 'crop')
