class EnhanceError(Exception):
    """Base class for every error raised by the enhancement engine"""


class DimensionError(EnhanceError, ValueError):
    """Tensor shapes or channel counts violate an operation's contract"""


class ArgumentError(EnhanceError, ValueError):
    """A scalar argument is outside its valid range"""


class NonFiniteError(EnhanceError, FloatingPointError):
    """NaN or Inf produced at an operation boundary"""

    def __init__(self, op_name, message=None):
        super().__init__(message or f"non-finite values produced by '{op_name}'")
        self.op_name = op_name


class LossTermError(NonFiniteError):
    """A named loss term went non-finite"""

    def __init__(self, term, op_name):
        super().__init__(op_name, f"loss term '{term}' is non-finite (op '{op_name}')")
        self.term = term


class GradCheckError(EnhanceError, AssertionError):
    """Analytic gradient disagrees with finite differences, or is non-finite"""

    def __init__(self, parameter, message):
        super().__init__(f"gradient check failed for '{parameter}': {message}")
        self.parameter = parameter


class InvariantViolation(EnhanceError, RuntimeError):
    pass


class ConfigError(EnhanceError, ValueError):
    pass


class WeightLoadError(EnhanceError):
    """Base class for weight-file problems"""


class ManifestError(WeightLoadError):
    """The weight manifest is missing, malformed or inconsistent"""


class WeightShapeError(WeightLoadError):
    """A stored tensor does not match the shape the configuration expects"""

    def __init__(self, tensor_name, message):
        super().__init__(f"{tensor_name}: {message}")
        self.tensor_name = tensor_name


class TruncatedWeightsError(WeightLoadError):
    """The raw blob is shorter than the manifest declares"""


class DatasetError(EnhanceError):
    pass


class TrainingDivergedError(EnhanceError, FloatingPointError):
    """
    Training produced NaN or Inf. `term` is the loss term that failed, or
    'forward' / 'backward' when the failure happened outside the loss.
    """

    def __init__(self, step, term, op_name=None):
        detail = f", op: {op_name}" if op_name else ""
        super().__init__(f"non-finite values at step {step} (term: {term}{detail})")
        self.step = step
        self.term = term
        self.op_name = op_name


class ImageReadError(EnhanceError, OSError):
    """An image file could not be opened or decoded"""
