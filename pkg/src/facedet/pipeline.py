"""End-to-end detection: features -> per-window candidates -> modified NMS
-> single thresholded detection in original pixel coordinates."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boxes import BoundingBox, containment, iou
from .errors import ConfigError, FormatError
from .nn import NetworkSpec, forward, load_image, preprocess, resized_shape
from .windows import Candidate, ModelBank, NmsParams, best_position, map_to_image


@dataclass(frozen=True)
class Detection:
    present: bool
    box: Optional[BoundingBox] = None
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.present and (self.box is None or self.score is None):
            raise ConfigError("present detection needs a box and a score")


def propose(feature: np.ndarray, bank: ModelBank) -> list[Candidate]:
    """Best placement of every applicable window model, mapped to pixels."""
    if not bank.models:
        raise ConfigError("model bank is empty")
    out = []
    for model in bank.models:
        hit = best_position(model, feature)
        if hit is None:  # window larger than this feature map
            continue
        r, c, score = hit
        out.append(Candidate(
            window=model.size, r=r, c=c, score=score,
            box=map_to_image(model.size, r, c),
        ))
    return out


def _ordered(cands: Sequence[Candidate]) -> list[Candidate]:
    return sorted(cands, key=lambda d: (-d.score, d.window.i, d.window.j, d.r, d.c))


def nms_modified(cands: Sequence[Candidate], params: NmsParams) -> list[Candidate]:
    """Two-stage suppression.

    Stage 1 walks candidates by descending score and drops any later candidate
    that overlaps the current survivor (IoU >= overlap_thresh) with a score
    more than big_score_gap below it. Stage 2 walks the survivors by
    descending area: a larger box that covers containment_thresh of a smaller
    box and scores no more than small_score_gap below it suppresses the
    smaller box.
    """
    order = _ordered(cands)
    alive = [True] * len(order)
    for a in range(len(order)):
        if not alive[a]:
            continue
        for b in range(a + 1, len(order)):
            if not alive[b]:
                continue
            if (iou(order[a].box, order[b].box) >= params.overlap_thresh
                    and order[b].score < order[a].score - params.big_score_gap):
                alive[b] = False

    survivors = [c for c, ok in zip(order, alive) if ok]
    by_area = sorted(
        range(len(survivors)),
        key=lambda idx: (-survivors[idx].box.area, -survivors[idx].score),
    )
    alive = [True] * len(survivors)
    for ai in range(len(by_area)):
        larger = survivors[by_area[ai]]
        if not alive[by_area[ai]]:
            continue
        for bi in range(ai + 1, len(by_area)):
            smaller = survivors[by_area[bi]]
            if not alive[by_area[bi]]:
                continue
            if (containment(larger.box, smaller.box) >= params.containment_thresh
                    and larger.score >= smaller.score - params.small_score_gap):
                alive[by_area[bi]] = False
    return _ordered([c for c, ok in zip(survivors, alive) if ok])


def detect(
    image: np.ndarray,
    net: NetworkSpec,
    weights: dict[str, np.ndarray],
    bank: ModelBank,
    target_long_side: int = 640,
) -> Detection:
    """Full pipeline on one RGB image; box reported in original pixels."""
    h, w = image.shape[:2]
    tensor = preprocess(image, target_long_side)
    feature = forward(net, weights, tensor)
    cands = [c for c in propose(feature, bank)]
    survivors = nms_modified(cands, bank.nms_params)
    if not survivors:
        return Detection(present=False)
    top = survivors[0]
    if top.score < bank.detection_threshold:
        return Detection(present=False)
    nh, nw = resized_shape(h, w, target_long_side)
    sy, sx = h / nh, w / nw
    box = BoundingBox(
        x=top.box.x * sx, y=top.box.y * sy, w=top.box.w * sx, h=top.box.h * sy,
    )
    return Detection(present=True, box=box, score=top.score)


def detect_paths(
    paths: Sequence[str],
    net: NetworkSpec,
    weights: dict[str, np.ndarray],
    bank: ModelBank,
    workers: int = 1,
    target_long_side: int = 640,
) -> list[Detection]:
    """detect() over image files; results ordered like ``paths`` regardless
    of worker count."""

    def run(path: str) -> Detection:
        return detect(load_image(path), net, weights, bank, target_long_side)

    if workers <= 1:
        return [run(p) for p in paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, paths))


# ---------------------------------------------------------------------------
# detections JSONL
# ---------------------------------------------------------------------------

def detection_to_record(path: str, det: Detection) -> dict:
    return {
        "path": path,
        "present": det.present,
        "box": det.box.as_list() if det.box is not None else None,
        "score": det.score,
    }


def write_detections(records: Sequence[tuple[str, Detection]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for img_path, det in records:
            f.write(json.dumps(detection_to_record(img_path, det)) + "\n")


def read_detections(path: str) -> dict[str, Detection]:
    out: dict[str, Detection] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                box = rec["box"]
                out[rec["path"]] = Detection(
                    present=bool(rec["present"]),
                    box=BoundingBox(*box) if box is not None else None,
                    score=rec["score"],
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad detection record: {exc}") from exc
    return out
