import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aslks.errors import InputError
from aslks.metrics import (
    Box,
    Detection,
    GroundTruth,
    average_precision_50,
    iou,
    map50,
    match_detections,
    parse_detections,
    parse_ground_truth,
)
from aslks.oracles import ap_exhaustive, map50_exhaustive
from aslks.rng import SplitMix64
from aslks.verify import _as_tuples, random_detection_instance

SQ = Box(0, 0, 10, 10)

boxes = st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(0.5, 30), st.floats(0.5, 30)).map(
    lambda t: Box(t[0], t[1], t[0] + t[2], t[1] + t[3]))


def test_iou_examples():
    assert iou(SQ, SQ) == 1.0
    assert iou(SQ, Box(20, 20, 30, 30)) == 0.0
    assert iou(SQ, Box(10, 0, 20, 10)) == 0.0  # touching edge
    assert iou(SQ, Box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(a=boxes, b=boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a) and 0.0 <= v <= 1.0
    if a == b:
        assert v == 1.0
    elif v == 1.0:
        assert np.allclose([a.x1, a.y1, a.x2, a.y2], [b.x1, b.y1, b.x2, b.y2])


def test_invalid_box_and_confidence():
    with pytest.raises(InputError):
        Box(5, 0, 5, 1)
    with pytest.raises(InputError):
        Detection(0, 0, SQ, 1.5)


def test_ap_single_point_cases():
    gt = [GroundTruth(0, 0, SQ)]
    hit = Box(0, 0, 10, 6)  # IoU 0.6
    assert iou(SQ, hit) == pytest.approx(0.6)
    assert average_precision_50([Detection(0, 0, hit, 0.9)], gt) == 1.0
    weak = Box(0, 0, 10, 4)  # IoU 0.4
    assert average_precision_50([Detection(0, 0, weak, 0.9)], gt) == 0.0


def test_ap_hit_miss_hit():
    gt = [GroundTruth(0, 0, SQ), GroundTruth(0, 0, Box(20, 20, 30, 30))]
    dets = [Detection(0, 0, SQ, 0.9), Detection(0, 0, Box(50, 50, 60, 60), 0.8),
            Detection(0, 0, Box(20, 20, 30, 30), 0.7)]
    want = 0.5 * 1.0 + 0.5 * (2 / 3)
    assert average_precision_50(dets, gt) == pytest.approx(want, abs=1e-15)
    assert ap_exhaustive([(d.image_id, (d.box.x1, d.box.y1, d.box.x2, d.box.y2), d.confidence) for d in dets],
                         [(g.image_id, (g.box.x1, g.box.y1, g.box.x2, g.box.y2)) for g in gt]) == pytest.approx(want)
    assert match_detections(dets, gt) == [True, False, True]


def test_matching_prefers_higher_iou_and_lower_index():
    gt = [GroundTruth(0, 0, Box(0, 0, 10, 10)), GroundTruth(0, 0, Box(1, 0, 11, 10))]
    d = Detection(0, 0, Box(1, 0, 11, 10), 0.9)
    assert match_detections([d, Detection(0, 0, Box(1, 0, 11, 10), 0.5)], gt) == [True, True]
    tied = [GroundTruth(0, 0, SQ), GroundTruth(0, 0, SQ)]
    assert match_detections([Detection(0, 0, SQ, 0.9)], tied) == [True]


def test_detections_on_other_images_never_match():
    assert match_detections([Detection(1, 0, SQ, 0.9)], [GroundTruth(0, 0, SQ)]) == [False]


def test_map50_examples():
    gt = [GroundTruth(0, 0, SQ), GroundTruth(0, 1, SQ), GroundTruth(1, 1, SQ)]
    det = [Detection(0, 0, SQ, 0.9), Detection(0, 1, SQ, 0.9), Detection(1, 1, Box(50, 50, 60, 60), 0.8)]
    res = map50(det, gt, 2)
    assert res.per_class_ap.tolist() == [1.0, 0.5] and res.map50 == 0.75
    assert json.loads(res.to_json())["map50"] == 0.75 and '"map50": 0.7500' in res.to_json()
    none = map50([], gt, 2)
    assert none.map50 == 0.0
    empty = map50([], [], 3)
    assert empty.map50 == 0.0 and empty.empty_classes == [0, 1, 2]
    with pytest.raises(InputError, match="class_id"):
        map50([Detection(0, 5, SQ, 0.5)], gt, 2)


@pytest.mark.parametrize("seed", range(4))
def test_random_instances_match_exhaustive_oracle(seed):
    r = SplitMix64(seed)
    for _ in range(50):
        dets, gts = random_detection_instance(r, n_classes=3)
        res = map50(dets, gts, 3)
        assert abs(res.map50 - map50_exhaustive(*_as_tuples(dets, gts), 3)) <= 1e-12
        assert res.map50 == float(np.mean(res.per_class_ap))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), power=st.floats(0.2, 5.0))
def test_monotone_confidence_transform(seed, power):
    dets, gts = random_detection_instance(SplitMix64(seed), n_classes=1, max_dets=6)
    moved = [Detection(d.image_id, d.class_id, d.box, d.confidence ** power) for d in dets]
    if len({d.confidence for d in moved}) < len(moved):
        return  # transform collapsed distinct confidences in floating point
    assert average_precision_50(moved, gts, 0) == average_precision_50(dets, gts, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_duplicate_detection_never_increases_ap(seed):
    dets, gts = random_detection_instance(SplitMix64(seed), n_classes=1, max_dets=6)
    flags = match_detections(dets, gts)
    matched = [d for d, f in zip(sorted(dets, key=lambda d: -d.confidence), flags) if f]
    if not matched:
        return
    base = average_precision_50(dets, gts, 0)
    low = min(d.confidence for d in dets)
    dup = Detection(matched[0].image_id, 0, matched[0].box, low / 2)
    assert average_precision_50(dets + [dup], gts, 0) <= base


def test_parse_records_and_errors():
    dets = parse_detections([{"image_id": "a", "class_id": 0, "box": [0, 0, 1, 1], "confidence": 0.5}])
    assert dets[0].box == Box(0, 0, 1, 1)
    gts = parse_ground_truth([{"image_id": "a", "class_id": 1, "box": [0, 0, 2, 2]}])
    assert gts[0].class_id == 1
    with pytest.raises(InputError, match=r"detections\[0\]: missing field 'confidence'"):
        parse_detections([{"image_id": "a", "class_id": 0, "box": [0, 0, 1, 1]}])
    with pytest.raises(InputError, match=r"ground_truth\[0\]\.box"):
        parse_ground_truth([{"image_id": "a", "class_id": 0, "box": [0, 0, 1]}])
    with pytest.raises(InputError, match="class_id"):
        parse_ground_truth([{"image_id": "a", "class_id": "0", "box": [0, 0, 1, 1]}])
