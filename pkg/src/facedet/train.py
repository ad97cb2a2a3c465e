"""Sample harvesting, per-window normalization, linear SVM fitting with
batched hard-negative mining, and model-bank assembly."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import ceil, floor
from typing import Callable, Optional, Sequence

import numpy as np

from .boxes import BoundingBox
from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    TrainingError,
    WindowDiscarded,
)
from .nn import NetworkSpec, forward, load_image, preprocess, resized_shape
from .windows import (
    FEATURE_STRIDE,
    ModelBank,
    NmsParams,
    STD_FLOOR,
    WindowModel,
    WindowSize,
    flatten_patch,
    window_grid,
)


@dataclass(frozen=True)
class Annotation:
    path: str
    face: Optional[BoundingBox] = None


@dataclass(frozen=True)
class TrainConfig:
    t_p: int = 1                 # positive selection: cell distance <= t_p
    t_n: int = 2                 # negative selection: cell distance > t_n
    negatives_per_image: int = 3
    min_positives: int = 20
    negative_batch: int = 500
    mining_cycles: int = 5
    lam: float = 1e-4            # L2 regularization weight
    epochs: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.t_p <= self.t_n:
            raise ConfigError(f"need t_n >= t_p >= 0, got t_p={self.t_p} t_n={self.t_n}")
        if self.mining_cycles < 1:
            raise ConfigError(f"mining_cycles must be >= 1, got {self.mining_cycles}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.epochs < 1 or self.negatives_per_image < 1 or self.negative_batch < 1:
            raise ConfigError("epochs, negatives_per_image, negative_batch must be >= 1")

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def config_from_json(text: str) -> TrainConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"train config is not valid JSON: {exc}") from exc
    known = TrainConfig.__dataclass_fields__
    bad = set(doc) - set(known)
    if bad:
        raise ConfigError(f"unknown train config keys: {sorted(bad)}")
    return TrainConfig(**doc)


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def read_manifest(path: str) -> list[Annotation]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                box = rec["box"]
                out.append(Annotation(
                    path=rec["path"],
                    face=BoundingBox(*box) if box is not None else None,
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return out


def write_manifest(annotations: Sequence[Annotation], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ann in annotations:
            rec = {"path": ann.path,
                   "box": ann.face.as_list() if ann.face is not None else None}
            f.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# sample harvesting
# ---------------------------------------------------------------------------

def face_feature_size(box: BoundingBox) -> tuple[int, int]:
    """Face height/width in feature cells: ceil of the pixel size over 16."""
    return ceil(box.h / FEATURE_STRIDE), ceil(box.w / FEATURE_STRIDE)


# (feature map, face box in resized pixels or None) per training image
FeatureSample = tuple[np.ndarray, Optional[BoundingBox]]


def extract_features(
    annotations: Sequence[Annotation],
    net: NetworkSpec,
    weights: dict[str, np.ndarray],
    workers: int = 1,
    image_loader: Callable[[str], np.ndarray] = load_image,
    target_long_side: int = 640,
) -> list[FeatureSample]:
    """One forward pass per image; face boxes rescaled to the resized frame."""

    def run(ann: Annotation) -> FeatureSample:
        img = image_loader(ann.path)
        h, w = img.shape[:2]
        feature = forward(net, weights, preprocess(img, target_long_side))
        face = None
        if ann.face is not None:
            nh, nw = resized_shape(h, w, target_long_side)
            sy, sx = nh / h, nw / w
            face = BoundingBox(ann.face.x * sx, ann.face.y * sy,
                               ann.face.w * sx, ann.face.h * sy)
        return feature, face

    if workers <= 1:
        return [run(a) for a in annotations]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, annotations))


def harvest_positives(
    samples: Sequence[FeatureSample], window: WindowSize, t_p: int
) -> list[np.ndarray]:
    """Flattened patches anchored at each matching face's top-left cell.

    A face matches when both feature-cell dimensions are within t_p of the
    window; the anchor is clamped so the patch fits the feature map.
    """
    i, j = window
    out = []
    for feature, face in samples:
        if face is None:
            continue
        h_k, w_k = face_feature_size(face)
        if abs(i - h_k) > t_p or abs(j - w_k) > t_p:
            continue
        fh, fw = feature.shape[:2]
        if fh < i or fw < j:
            continue
        r0 = min(max(floor(face.y / FEATURE_STRIDE), 0), fh - i)
        c0 = min(max(floor(face.x / FEATURE_STRIDE), 0), fw - j)
        out.append(flatten_patch(feature, r0, c0, window).astype(np.float32))
    return out


def harvest_negatives(
    samples: Sequence[FeatureSample],
    window: WindowSize,
    t_n: int,
    negatives_per_image: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Random patches from no-face images and from images whose face size
    differs from the window by more than t_n on both axes."""
    i, j = window
    out = []
    for feature, face in samples:
        if face is not None:
            h_k, w_k = face_feature_size(face)
            if abs(i - h_k) <= t_n or abs(j - w_k) <= t_n:
                continue
        fh, fw = feature.shape[:2]
        if fh < i or fw < j:
            continue
        for _ in range(negatives_per_image):
            r = int(rng.integers(0, fh - i + 1))
            c = int(rng.integers(0, fw - j + 1))
            out.append(flatten_patch(feature, r, c, window).astype(np.float32))
    return out


def norm_stats(samples: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population std, std floored at 1e-6."""
    if len(samples) < 2:
        raise InsufficientDataError(
            f"need >= 2 samples for normalization stats, got {len(samples)}"
        )
    x = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    mean = x.mean(axis=0)
    std = np.sqrt(((x - mean) ** 2).mean(axis=0))
    return mean, np.maximum(std, STD_FLOOR)


# ---------------------------------------------------------------------------
# SVM fitting
# ---------------------------------------------------------------------------

def svm_objective(w: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray,
                  class_weights: np.ndarray, lam: float) -> float:
    """lam/2 ||w||^2 + mean class-weighted hinge loss."""
    margins = y * (x @ w + bias)
    hinge = np.maximum(0.0, 1.0 - margins)
    return 0.5 * lam * float(w @ w) + float(np.mean(class_weights * hinge))


def _balanced_weights(y: np.ndarray) -> np.ndarray:
    n = len(y)
    n_pos = int(np.sum(y > 0))
    n_neg = n - n_pos
    cw = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return cw


def fit_linear_svm(
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    epochs: int,
    w0: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, float]:
    """Full-batch subgradient descent on the class-balanced hinge objective.

    Step size 1/(lam*t); the bias rides an augmented all-ones column and is
    regularized with the weights. Deterministic: no sampling, fixed order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    cw = _balanced_weights(y)
    xa = np.hstack([x, np.ones((n, 1))])
    w = np.zeros(d + 1) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    for t in range(1, epochs + 1):
        margins = y * (xa @ w)
        coef = np.where(margins < 1.0, y * cw, 0.0)
        grad = lam * w - (xa.T @ coef) / n
        w -= grad / (lam * t)
    return w[:-1], float(w[-1])


def train_svm(
    positives: Sequence[np.ndarray],
    negative_pool: Sequence[np.ndarray],
    window: WindowSize,
    cfg: TrainConfig,
) -> WindowModel:
    """Mining loop: fit, score the negative batch, keep margin violators
    (decision value >= -1), refill from the pool, repeat."""
    if len(positives) < cfg.min_positives:
        raise WindowDiscarded(
            f"window {window}: {len(positives)} positives < {cfg.min_positives}"
        )
    if not negative_pool:
        raise TrainingError(f"window {window}: empty negative pool")

    pool = list(negative_pool)
    batch = pool[:cfg.negative_batch]
    reserve = pool[cfg.negative_batch:]

    mean, std = norm_stats(list(positives) + batch)
    pos = (np.stack(positives).astype(np.float64) - mean) / std

    w = None
    bias = 0.0
    for cycle in range(cfg.mining_cycles):
        neg = (np.stack(batch).astype(np.float64) - mean) / std
        x = np.vstack([pos, neg])
        y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
        w0 = None if w is None else np.concatenate([w, [bias]])
        w, bias = fit_linear_svm(x, y, cfg.lam, cfg.epochs, w0)
        if cycle == cfg.mining_cycles - 1:
            break
        scores = neg @ w + bias
        batch = [b for b, s in zip(batch, scores) if s >= -1.0]
        while reserve and len(batch) < cfg.negative_batch:
            batch.append(reserve.pop(0))
        if not batch:
            break
    return WindowModel(size=window, weights=w, bias=bias, mean=mean, std=std)


def score_samples(model: WindowModel, samples: Sequence[np.ndarray]) -> np.ndarray:
    """Decision values of already-flattened sample vectors."""
    x = (np.stack(samples).astype(np.float64) - model.mean) / model.std
    return x @ model.weights + model.bias


# ---------------------------------------------------------------------------
# bank assembly
# ---------------------------------------------------------------------------

def train_bank(
    manifest: Sequence[Annotation],
    net: NetworkSpec,
    weights: dict[str, np.ndarray],
    cfg: TrainConfig,
    detection_threshold: float = 1.0,
    nms_params: Optional[NmsParams] = None,
    workers: int = 1,
    image_loader: Callable[[str], np.ndarray] = load_image,
    target_long_side: int = 640,
) -> ModelBank:
    """One forward pass per image, then one mined SVM per surviving window."""
    if not manifest:
        raise TrainingError("empty training manifest")
    samples = extract_features(
        manifest, net, weights, workers=workers,
        image_loader=image_loader, target_long_side=target_long_side,
    )
    models = []
    for window in window_grid():
        rng = np.random.default_rng([cfg.seed, window.i, window.j])
        positives = harvest_positives(samples, window, cfg.t_p)
        pool = harvest_negatives(samples, window, cfg.t_n,
                                 cfg.negatives_per_image, rng)
        try:
            models.append(train_svm(positives, pool, window, cfg))
        except WindowDiscarded:
            continue
        except TrainingError:
            continue
    if not models:
        raise TrainingError("training failed: every window was discarded")
    return ModelBank(
        models=models,
        detection_threshold=detection_threshold,
        nms_params=nms_params if nms_params is not None else NmsParams(),
    )
