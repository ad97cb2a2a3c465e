"""Detection evaluation: IoU matching, per-image TP/FP/TN/FN, PR curves,
Max-F1 / Max-Accuracy / recall-at-precision, and IoU-threshold sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .boxes import iou
from .errors import ConfigError, InsufficientDataError
from .pipeline import Detection
from .train import Annotation

DEFAULT_IOU_THRESH = 0.5
SWEEP_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class EvalRecord:
    annotation: Annotation
    detection: Detection


@dataclass(frozen=True)
class PRPoint:
    score_threshold: float
    precision: float
    recall: float
    f1: float
    accuracy: float


@dataclass(frozen=True)
class Summary:
    max_f1: float
    max_accuracy: float
    recall_at_precision: Optional[float]


def join_records(
    annotations: Sequence[Annotation], detections: dict[str, Detection]
) -> list[EvalRecord]:
    """Pair annotations with detections by path; any mismatch is an error."""
    missing = [a.path for a in annotations if a.path not in detections]
    if missing:
        raise ConfigError(f"no detection for {len(missing)} annotated paths, "
                          f"first: {missing[0]!r}")
    extra = set(detections) - {a.path for a in annotations}
    if extra:
        raise ConfigError(f"detections for {len(extra)} unannotated paths, "
                          f"first: {sorted(extra)[0]!r}")
    return [EvalRecord(a, detections[a.path]) for a in annotations]


def classify(record: EvalRecord, iou_thresh: float, score_thresh: float) -> str:
    """Per-image outcome at one score threshold: TP, FP, FN, or TN.

    The overlap test is strict (> iou_thresh), the score test inclusive
    (>= score_thresh). A detection on a face-present image that fails the
    overlap test counts as FP (the image yields no additional FN).
    """
    det = record.detection
    fired = det.present and det.score is not None and det.score >= score_thresh
    if record.annotation.face is not None:
        if not fired:
            return "FN"
        if iou(det.box, record.annotation.face) > iou_thresh:
            return "TP"
        return "FP"
    return "FP" if fired else "TN"


def _counts(records: Sequence[EvalRecord], iou_thresh: float,
            score_thresh: float) -> dict[str, int]:
    counts = {"TP": 0, "FP": 0, "FN": 0, "TN": 0}
    for rec in records:
        counts[classify(rec, iou_thresh, score_thresh)] += 1
    return counts


def _point(records: Sequence[EvalRecord], iou_thresh: float,
           score_thresh: float) -> PRPoint:
    c = _counts(records, iou_thresh, score_thresh)
    tp, fp, fn, tn = c["TP"], c["FP"], c["FN"], c["TN"]
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    accuracy = (tp + tn) / len(records)
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return PRPoint(score_thresh, precision, recall, f1, accuracy)


def pr_curve(records: Sequence[EvalRecord],
             iou_thresh: float = DEFAULT_IOU_THRESH) -> list[PRPoint]:
    """One point per distinct detection score (plus +inf), descending."""
    if not records:
        raise InsufficientDataError("no evaluation records")
    scores = {r.detection.score for r in records
              if r.detection.present and r.detection.score is not None}
    thresholds = sorted(scores | {math.inf}, reverse=True)
    return [_point(records, iou_thresh, t) for t in thresholds]


def summary(records: Sequence[EvalRecord],
            iou_thresh: float = DEFAULT_IOU_THRESH,
            precision_target: float = 0.95) -> Summary:
    curve = pr_curve(records, iou_thresh)
    qualifying = [p.recall for p in curve if p.precision >= precision_target]
    return Summary(
        max_f1=max(p.f1 for p in curve),
        max_accuracy=max(p.accuracy for p in curve),
        recall_at_precision=max(qualifying) if qualifying else None,
    )


def iou_sweep(
    records: Sequence[EvalRecord],
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
) -> list[tuple[float, float, float]]:
    """(iou_thresh, max_f1, max_accuracy) per threshold, 0.1 to 0.9."""
    out = []
    for th in thresholds:
        s = summary(records, th)
        out.append((th, s.max_f1, s.max_accuracy))
    return out


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_pr_csv(points: Sequence[PRPoint], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "precision", "recall", "f1", "accuracy"])
        for p in points:
            w.writerow([p.score_threshold, p.precision, p.recall, p.f1, p.accuracy])


def write_sweep_csv(rows: Sequence[tuple[float, float, float]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iou_thresh", "max_f1", "max_accuracy"])
        for row in rows:
            w.writerow(list(row))
