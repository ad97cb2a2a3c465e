"""Exception types shared across the toolkit."""


class FacedetError(Exception):
    """Base class for all toolkit errors."""


class FormatError(FacedetError):
    """Malformed or truncated binary container."""


class DimensionError(FacedetError):
    """Tensor shapes incompatible with the requested operation."""


class BoundsError(FacedetError):
    """Patch or index falls outside a tensor."""


class ConfigError(FacedetError):
    """Invalid network / bank configuration, missing weight bindings."""


class NumericError(FacedetError):
    """Out-of-range or non-finite numeric input."""


class InsufficientDataError(FacedetError):
    """Too few samples/records to compute the requested statistic."""


class TrainingError(FacedetError):
    """Training could not produce a usable model bank."""


class WindowDiscarded(FacedetError):
    """Signal: a window size has too few positives and is dropped."""
