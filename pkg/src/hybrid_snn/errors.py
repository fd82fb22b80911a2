"""Exception hierarchy shared across the package."""


class SNNError(Exception):
    """Base class for every error raised by hybrid_snn."""


class ShapeError(SNNError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(SNNError, ValueError):
    """A layer, architecture or run configuration is inconsistent."""


class NumericError(SNNError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class InputError(SNNError, ValueError):
    """Input data violates its documented range."""


class DegenerateThresholdError(SNNError):
    """Threshold balancing produced a non-positive threshold."""


class FormatError(SNNError, ValueError):
    """A dataset or checkpoint file is malformed."""


class ComparisonError(SNNError, ValueError):
    """Two spike reports were not recorded under identical conditions."""


class TrainingDivergedError(SNNError, RuntimeError):
    """Loss or gradients became non-finite during training."""
