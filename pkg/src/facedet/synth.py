"""Synthetic dataset generator for desk-scale training and evaluation runs.

Images are 640x360 RGB frames (portrait, long side already at the resize
target). A "face" is a fixed-phase nested-rectangle pattern planted at a
random position; sizes span the sliding-window grid. No-face frames carry
background clutter only.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .train import Annotation, write_manifest
from .windows import FEATURE_STRIDE, WindowSize

IMAGE_ROWS = 640
IMAGE_COLS = 360
NO_FACE_FRACTION = 0.25

# Window sizes the generator targets; face pixel sizes are drawn just under
# these cell counts so the ceil(size/16) law lands exactly on the window.
TARGET_WINDOWS = (
    WindowSize(9, 8), WindowSize(11, 10), WindowSize(13, 10),
    WindowSize(13, 12), WindowSize(15, 12), WindowSize(15, 14),
    WindowSize(17, 14), WindowSize(17, 16), WindowSize(19, 16),
    WindowSize(19, 18), WindowSize(21, 18), WindowSize(23, 20),
)

_RING_COLORS = (
    (245, 60, 45), (45, 215, 235), (245, 225, 50), (25, 25, 95), (240, 240, 240),
)


def _background(rng: np.random.Generator) -> np.ndarray:
    base = rng.integers(90, 150, size=3).astype(np.float64)
    yy = np.linspace(0.0, 1.0, IMAGE_ROWS)[:, None, None]
    xx = np.linspace(0.0, 1.0, IMAGE_COLS)[None, :, None]
    tilt = 0.75 + 0.25 * yy + 0.15 * xx
    img = base * tilt + rng.normal(0.0, 6.0, (IMAGE_ROWS, IMAGE_COLS, 3))
    return np.clip(img, 0, 255)


def _face_patch(h: int, w: int) -> np.ndarray:
    """Nested rectangles with a fixed color phase; deterministic in (h, w)."""
    patch = np.zeros((h, w, 3), dtype=np.float64)
    n_rings = 5
    for t in range(n_rings):
        y0 = t * h // (2 * n_rings)
        x0 = t * w // (2 * n_rings)
        patch[y0:h - y0, x0:w - x0] = _RING_COLORS[t % len(_RING_COLORS)]
    return patch


def _clutter(img: np.ndarray, rng: np.random.Generator) -> None:
    for _ in range(int(rng.integers(3, 9))):
        ch = int(rng.integers(40, 200))
        cw = int(rng.integers(40, 200))
        y = int(rng.integers(0, IMAGE_ROWS - ch + 1))
        x = int(rng.integers(0, IMAGE_COLS - cw + 1))
        img[y:y + ch, x:x + cw] = rng.integers(40, 210, size=3)


def generate_synthetic(
    count: int, rng: np.random.Generator
) -> list[tuple[np.ndarray, Optional[BoundingBox]]]:
    """``count`` images with annotations; box is None for no-face frames."""
    out: list[tuple[np.ndarray, Optional[BoundingBox]]] = []
    for _ in range(count):
        img = _background(rng)
        if rng.random() < NO_FACE_FRACTION:
            _clutter(img, rng)
            out.append((np.clip(img, 0, 255).astype(np.uint8), None))
            continue
        wi, wj = TARGET_WINDOWS[int(rng.integers(0, len(TARGET_WINDOWS)))]
        h = FEATURE_STRIDE * wi - int(rng.integers(1, 9))
        w = FEATURE_STRIDE * wj - int(rng.integers(1, 9))
        # keep the face where its feature patch fully fits the 40x23 map
        y_max = min(IMAGE_ROWS - h, FEATURE_STRIDE * (IMAGE_ROWS // FEATURE_STRIDE - wi))
        x_max = min(IMAGE_COLS - w, FEATURE_STRIDE * (-(-IMAGE_COLS // FEATURE_STRIDE) - wj))
        y = int(rng.integers(0, y_max + 1))
        x = int(rng.integers(0, x_max + 1))
        img[y:y + h, x:x + w] = _face_patch(h, w)
        out.append((
            np.clip(img, 0, 255).astype(np.uint8),
            BoundingBox(x=x, y=y, w=w, h=h),
        ))
    return out


def write_synthetic(out_dir: str, count: int, seed: int) -> str:
    """Write PNG frames plus a manifest.jsonl; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    annotations = []
    for idx, (img, box) in enumerate(generate_synthetic(count, rng)):
        path = os.path.join(out_dir, f"img_{idx:05d}.png")
        Image.fromarray(img).save(path)
        annotations.append(Annotation(path=path, face=box))
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(annotations, manifest_path)
    return manifest_path
