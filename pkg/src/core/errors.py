"""
Exception hierarchy shared by every MAFFSRN module.

The CLI maps each class to an exit code (see src/ui/commands.py).
"""


class MaffsrnError(Exception):
    """Base class for all errors raised by this package"""


class ConfigError(MaffsrnError):
    """Invalid network/training configuration or bad command-line usage"""


class ShapeError(MaffsrnError):
    """Tensor shapes do not satisfy an operator or block precondition"""


class NumericError(MaffsrnError):
    """An operator produced NaN/Inf, or training diverged"""


class GradientError(MaffsrnError):
    """The tape cannot produce the requested gradients"""


class CheckpointFormatError(MaffsrnError):
    """A checkpoint file is corrupt, truncated or from another version"""


class ImageFormatError(MaffsrnError):
    """A PNG file uses an unsupported bit depth or color type"""


class DataError(MaffsrnError):
    """Input data is missing, empty or too small for the requested operation"""
