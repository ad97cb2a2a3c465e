"""Candidate proposal, two-stage NMS, and the detect pipeline."""

import numpy as np
import pytest

from facedet.boxes import BoundingBox
from facedet.errors import ConfigError
from facedet.pipeline import (
    Detection,
    detect,
    nms_modified,
    propose,
    read_detections,
    write_detections,
)
from facedet.windows import (
    FEATURE_CHANNELS,
    Candidate,
    ModelBank,
    NmsParams,
    WindowModel,
    WindowSize,
    window_grid,
)


def cand(x, y, w, h, score, window=WindowSize(9, 8), r=0, c=0):
    return Candidate(window=window, r=r, c=c, score=score,
                     box=BoundingBox(x, y, w, h))


def random_candidates(rng, n):
    out = []
    for k in range(n):
        out.append(Candidate(
            window=WindowSize(9 + 2 * int(rng.integers(0, 8)),
                              8 + 2 * int(rng.integers(0, 7))),
            r=int(rng.integers(0, 20)), c=int(rng.integers(0, 12)),
            score=float(rng.normal(0, 2)),
            box=BoundingBox(float(rng.uniform(0, 300)), float(rng.uniform(0, 500)),
                            float(rng.uniform(30, 350)), float(rng.uniform(30, 350))),
        ))
    return out


# ---------------------------------------------------------------------------
# nms_modified
# ---------------------------------------------------------------------------

def test_nms_empty():
    assert nms_modified([], NmsParams()) == []


def test_nms_single():
    c = cand(0, 0, 100, 100, 1.0)
    assert nms_modified([c], NmsParams()) == [c]


def test_nms_stage1_suppresses_overlapping_low_scorer():
    a = cand(0, 0, 100, 100, 2.0)
    b = cand(0, 0, 100, 100, 0.5, window=WindowSize(9, 10))
    out = nms_modified([b, a], NmsParams(big_score_gap=0.5))
    assert out == [a]


def test_nms_stage1_keeps_close_scores():
    # IoU 0.504 (over the stage-1 bar) but containment 0.67 (under stage 2's)
    a = cand(0, 0, 100, 100, 2.0)
    b = cand(33, 0, 100, 100, 1.8, window=WindowSize(9, 10))
    out = nms_modified([a, b], NmsParams(big_score_gap=0.5))
    assert out == [a, b]


def test_nms_stage2_contained_small_box_suppressed():
    small = cand(50, 50, 60, 60, 1.2)
    large = cand(0, 0, 300, 300, 1.1, window=WindowSize(23, 20))
    out = nms_modified([small, large], NmsParams(small_score_gap=0.2))
    assert out == [large]


def test_nms_stage2_respects_score_gap():
    small = cand(50, 50, 60, 60, 2.0)
    large = cand(0, 0, 300, 300, 1.1, window=WindowSize(23, 20))
    out = nms_modified([small, large], NmsParams(small_score_gap=0.2))
    assert small in out and large in out


def test_nms_subset_sorted_idempotent():
    rng = np.random.default_rng(0)
    params = NmsParams()
    for trial in range(50):
        cands = random_candidates(rng, int(rng.integers(0, 15)))
        out = nms_modified(cands, params)
        assert all(c in cands for c in out)
        scores = [c.score for c in out]
        assert scores == sorted(scores, reverse=True)
        assert nms_modified(out, params) == out


def test_nms_top_score_survives_with_zero_small_gap():
    rng = np.random.default_rng(1)
    params = NmsParams(small_score_gap=0.0)
    for trial in range(50):
        cands = random_candidates(rng, int(rng.integers(1, 15)))
        out = nms_modified(cands, params)
        assert max(c.score for c in cands) == out[0].score


# ---------------------------------------------------------------------------
# propose
# ---------------------------------------------------------------------------

def make_bank(rng, sizes, threshold=1.0, nms=None):
    models = []
    for size in sizes:
        dim = size.i * size.j * FEATURE_CHANNELS
        models.append(WindowModel(
            size=size, weights=rng.standard_normal(dim) * 0.01,
            bias=0.0, mean=np.zeros(dim), std=np.ones(dim),
        ))
    return ModelBank(models, detection_threshold=threshold,
                     nms_params=nms or NmsParams())


def test_propose_empty_bank_rejected():
    feature = np.zeros((10, 10, FEATURE_CHANNELS), dtype=np.float32)
    with pytest.raises(ConfigError):
        propose(feature, ModelBank(models=[]))


def test_propose_only_fitting_windows():
    rng = np.random.default_rng(2)
    bank = make_bank(rng, window_grid())
    feature = rng.standard_normal((9, 8, FEATURE_CHANNELS)).astype(np.float32)
    cands = propose(feature, bank)
    assert len(cands) == 1
    assert cands[0].window == WindowSize(9, 8)


def test_propose_boxes_within_feature_extent():
    rng = np.random.default_rng(3)
    bank = make_bank(rng, window_grid()[:10])
    feature = rng.standard_normal((24, 21, FEATURE_CHANNELS)).astype(np.float32)
    cands = propose(feature, bank)
    assert len(cands) <= 56
    for c in cands:
        assert c.box.x + c.box.w <= 16 * feature.shape[1]
        assert c.box.y + c.box.h <= 16 * feature.shape[0]
        assert c.box == pytest.approx(c.box)  # dataclass equality sanity


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_setup():
    from facedet import nn
    net = nn.load_network()
    weights = nn.random_weights(net, 5)
    return net, weights


def test_detect_tiny_image_absent(small_setup):
    net, weights = small_setup
    rng = np.random.default_rng(4)
    bank = make_bank(rng, [WindowSize(9, 8)])
    img = rng.integers(0, 255, (40, 40, 3), dtype=np.uint8)
    det = detect(img, net, weights, bank, target_long_side=40)
    assert det == Detection(present=False)


def test_detect_threshold_extremes(small_setup):
    net, weights = small_setup
    rng = np.random.default_rng(5)
    img = rng.integers(0, 255, (200, 160, 3), dtype=np.uint8)
    low = make_bank(rng, [WindowSize(9, 8)], threshold=-1e10)
    det = detect(img, net, weights, low, target_long_side=200)
    assert det.present
    assert det.score >= low.detection_threshold
    high = ModelBank(low.models, detection_threshold=1e10, nms_params=low.nms_params)
    det2 = detect(img, net, weights, high, target_long_side=200)
    assert not det2.present


def test_detect_monotone_in_threshold(small_setup):
    net, weights = small_setup
    rng = np.random.default_rng(6)
    img = rng.integers(0, 255, (200, 160, 3), dtype=np.uint8)
    bank = make_bank(rng, [WindowSize(9, 8), WindowSize(11, 10)], threshold=-1e10)
    det = detect(img, net, weights, bank, target_long_side=200)
    assert det.present
    for delta in (0.0, 1e-9, 1.0):
        bank2 = ModelBank(bank.models, detection_threshold=det.score + delta,
                          nms_params=bank.nms_params)
        det2 = detect(img, net, weights, bank2, target_long_side=200)
        assert det2.present == (delta == 0.0)


def test_detect_box_rescaled_to_original(small_setup):
    net, weights = small_setup
    rng = np.random.default_rng(7)
    img = rng.integers(0, 255, (400, 320, 3), dtype=np.uint8)
    bank = make_bank(rng, [WindowSize(9, 8)], threshold=-1e10)
    det = detect(img, net, weights, bank, target_long_side=200)
    # feature box lives in the 200x160 frame; reported box in 400x320 pixels
    assert det.present
    assert det.box.w == pytest.approx(2 * 16 * 8)
    assert det.box.h == pytest.approx(2 * 16 * 9)


# ---------------------------------------------------------------------------
# detections JSONL
# ---------------------------------------------------------------------------

def test_detections_jsonl_roundtrip(tmp_path):
    records = [
        ("a.png", Detection(True, BoundingBox(1.0, 2.0, 30.0, 40.0), 1.25)),
        ("b.png", Detection(False)),
    ]
    path = tmp_path / "dets.jsonl"
    write_detections(records, str(path))
    back = read_detections(str(path))
    assert back["a.png"] == records[0][1]
    assert back["b.png"] == records[1][1]
