"""Single-face detector toolkit: CNN feature extraction, sliding-window
linear SVMs, modified non-maximum suppression, hard-negative-mining trainer,
and a precision/recall evaluation harness."""

from .boxes import BoundingBox
from .pipeline import Detection, detect, nms_modified, propose
from .windows import ModelBank, NmsParams, WindowModel, WindowSize, window_grid

__all__ = [
    "BoundingBox",
    "Detection",
    "ModelBank",
    "NmsParams",
    "WindowModel",
    "WindowSize",
    "detect",
    "nms_modified",
    "propose",
    "window_grid",
]

__version__ = "0.1.0"
