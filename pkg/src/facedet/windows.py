"""Sliding-window grid, per-window linear SVMs, and feature-space scoring.

One linear SVM per window size (i rows x j cols of feature cells); scoring a
placement means flattening the i*j*256 patch, normalizing with the model's
stored statistics, and taking the decision value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BoundingBox
from .errors import BoundsError, ConfigError, DimensionError, FormatError
from .tensor import dfw_load, dfw_save

FEATURE_CHANNELS = 256
FEATURE_STRIDE = 16
STD_FLOOR = 1e-6

WINDOW_HEIGHTS = tuple(range(9, 24, 2))
WINDOW_WIDTHS = tuple(range(8, 21, 2))


class WindowSize(NamedTuple):
    i: int  # height in feature cells
    j: int  # width in feature cells


def window_grid() -> list[WindowSize]:
    """All 56 window sizes, height-major ascending."""
    return [WindowSize(i, j) for i in WINDOW_HEIGHTS for j in WINDOW_WIDTHS]


@dataclass
class WindowModel:
    size: WindowSize
    weights: np.ndarray  # (i*j*256,) applied to the normalized patch
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        dim = self.size.i * self.size.j * FEATURE_CHANNELS
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)
        for name, vec in (("weights", self.weights), ("mean", self.mean),
                          ("std", self.std)):
            if vec.shape != (dim,):
                raise DimensionError(
                    f"model {self.size}: {name} length {vec.size}, expected {dim}"
                )
        if np.any(self.std < STD_FLOOR):
            raise DimensionError(f"model {self.size}: std below floor {STD_FLOOR}")


@dataclass(frozen=True)
class NmsParams:
    overlap_thresh: float = 0.5
    big_score_gap: float = 0.5
    small_score_gap: float = 0.2
    containment_thresh: float = 0.7

    def __post_init__(self) -> None:
        if not 0.0 < self.overlap_thresh < 1.0:
            raise ConfigError(f"overlap_thresh must be in (0,1): {self.overlap_thresh}")
        if self.big_score_gap < 0 or self.small_score_gap < 0:
            raise ConfigError("score gaps must be >= 0")
        if not 0.0 < self.containment_thresh <= 1.0:
            raise ConfigError(
                f"containment_thresh must be in (0,1]: {self.containment_thresh}"
            )


@dataclass
class ModelBank:
    models: list[WindowModel]
    detection_threshold: float = 1.0
    nms_params: NmsParams = field(default_factory=NmsParams)

    def __post_init__(self) -> None:
        sizes = [m.size for m in self.models]
        if len(sizes) != len(set(sizes)):
            raise ConfigError("bank holds more than one model for a window size")


@dataclass(frozen=True)
class Candidate:
    window: WindowSize
    r: int
    c: int
    score: float
    box: BoundingBox


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def flatten_patch(feature: np.ndarray, r: int, c: int, size: WindowSize) -> np.ndarray:
    """Row-major (row, col, channel) flattening of the i x j patch at (r, c)."""
    h, w = feature.shape[:2]
    if r < 0 or c < 0 or r + size.i > h or c + size.j > w:
        raise BoundsError(
            f"patch {size} at ({r}, {c}) outside {h}x{w} feature map"
        )
    return feature[r:r + size.i, c:c + size.j, :].ravel()


def score_window(model: WindowModel, feature: np.ndarray, r: int, c: int) -> float:
    """SVM decision value on the normalized patch at placement (r, c)."""
    flat = flatten_patch(feature, r, c, model.size).astype(np.float64)
    z = (flat - model.mean) / model.std
    return float(np.dot(model.weights, z) + model.bias)


def placement_scores(model: WindowModel, feature: np.ndarray) -> Optional[np.ndarray]:
    """Decision values for every placement, or None if the window doesn't fit.

    Computed as a correlation with the folded-in normalization; agrees with
    score_window up to reassociation (~1e-12 relative).
    """
    i, j = model.size
    h, w = feature.shape[:2]
    if i > h or j > w:
        return None
    wn = (model.weights / model.std).reshape(i, j, FEATURE_CHANNELS)
    b_eff = model.bias - float(np.dot(model.weights, model.mean / model.std))
    sw = sliding_window_view(feature, (i, j), axis=(0, 1))
    return np.tensordot(sw.astype(np.float64), wn, axes=([2, 3, 4], [2, 0, 1])) + b_eff


def best_position(model: WindowModel, feature: np.ndarray) -> Optional[tuple[int, int, float]]:
    """Argmax of score_window over all placements; ties -> smallest r, then c.

    Returns None when the window is larger than the feature map (the model is
    not applicable to this image).
    """
    scores = placement_scores(model, feature)
    if scores is None:
        return None
    top = float(scores.max())
    # rescore near-max placements exactly so the result matches a per-placement
    # score_window scan bit for bit, including the tie rule
    tol = 1e-9 * max(1.0, abs(top))
    best: Optional[tuple[int, int, float]] = None
    for r, c in np.argwhere(scores >= top - tol):
        s = score_window(model, feature, int(r), int(c))
        if best is None or s > best[2]:
            best = (int(r), int(c), s)
    return best


def map_to_image(window: WindowSize, r: int, c: int) -> BoundingBox:
    """Feature-cell placement to pixel box: scale everything by the stride."""
    if r < 0 or c < 0:
        raise BoundsError(f"negative placement ({r}, {c})")
    return BoundingBox(
        x=FEATURE_STRIDE * c, y=FEATURE_STRIDE * r,
        w=FEATURE_STRIDE * window.j, h=FEATURE_STRIDE * window.i,
    )


# ---------------------------------------------------------------------------
# bank serialization (DFW container)
# ---------------------------------------------------------------------------

_BANK_SCALARS = {
    "bank/detection_threshold": "detection_threshold",
    "bank/nms/overlap_thresh": "overlap_thresh",
    "bank/nms/big_score_gap": "big_score_gap",
    "bank/nms/small_score_gap": "small_score_gap",
    "bank/nms/containment_thresh": "containment_thresh",
}


def bank_to_store(bank: ModelBank) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    for model in sorted(bank.models, key=lambda m: m.size):
        prefix = f"svm/i{model.size.i}j{model.size.j}"
        store[f"{prefix}/weights"] = model.weights.astype(np.float32)
        store[f"{prefix}/bias"] = np.array([model.bias], dtype=np.float32)
        store[f"{prefix}/mean"] = model.mean.astype(np.float32)
        store[f"{prefix}/std"] = model.std.astype(np.float32)
    p = bank.nms_params
    store["bank/detection_threshold"] = np.array([bank.detection_threshold], np.float32)
    store["bank/nms/overlap_thresh"] = np.array([p.overlap_thresh], np.float32)
    store["bank/nms/big_score_gap"] = np.array([p.big_score_gap], np.float32)
    store["bank/nms/small_score_gap"] = np.array([p.small_score_gap], np.float32)
    store["bank/nms/containment_thresh"] = np.array([p.containment_thresh], np.float32)
    return store


def bank_from_store(store: dict[str, np.ndarray]) -> ModelBank:
    sizes = set()
    for name in store:
        if name.startswith("svm/i") and name.endswith("/weights"):
            tag = name.split("/")[1]
            i, j = tag[1:].split("j")
            sizes.add(WindowSize(int(i), int(j)))
    models = []
    for size in sorted(sizes):
        prefix = f"svm/i{size.i}j{size.j}"
        try:
            models.append(WindowModel(
                size=size,
                weights=store[f"{prefix}/weights"],
                bias=float(np.ravel(store[f"{prefix}/bias"])[0]),
                mean=store[f"{prefix}/mean"],
                std=np.maximum(store[f"{prefix}/std"].astype(np.float64), STD_FLOOR),
            ))
        except KeyError as exc:
            raise FormatError(f"bank store missing entry {exc} for {prefix}") from exc
    scalars = {}
    for key, attr in _BANK_SCALARS.items():
        if key not in store:
            raise FormatError(f"bank store missing scalar {key!r}")
        scalars[attr] = float(np.ravel(store[key])[0])
    return ModelBank(
        models=models,
        detection_threshold=scalars.pop("detection_threshold"),
        nms_params=NmsParams(**scalars),
    )


def save_bank(bank: ModelBank, path: str) -> None:
    dfw_save(bank_to_store(bank), path)


def load_bank(path: str) -> ModelBank:
    return bank_from_store(dfw_load(path))
