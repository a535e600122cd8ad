"""IoU, per-class AP at IoU 0.50 and mAP@50.

Matching is greedy in descending confidence (stable for ties): each
detection takes the unmatched ground truth of its image with the highest
IoU, provided that IoU is at least 0.5; IoU ties go to the lower ground
truth index. AP is the area under the precision envelope (all-point
interpolation). mAP@50 is the plain mean over all ``N`` classes, classes
without ground truth contributing 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import InputError

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InputError(f"box must satisfy x1 < x2 and y1 < y2: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: Hashable
    class_id: int
    box: Box


@dataclass
class ApResult:
    per_class_ap: np.ndarray
    map50: float
    n_classes: int
    empty_classes: list = field(default_factory=list)

    def to_json(self) -> str:
        """JSON text with every AP printed to four decimals."""
        aps = ", ".join(f"{a:.4f}" for a in self.per_class_ap)
        return (f'{{"n_classes": {self.n_classes}, "per_class_ap": [{aps}], '
                f'"map50": {self.map50:.4f}, "empty_classes": {json.dumps(self.empty_classes)}}}')


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth]) -> list:
    """True-positive flags in descending-confidence order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    by_image = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    used = set()
    flags = []
    for i in order:
        d = dets[i]
        best, best_iou = None, IOU_THRESHOLD
        for j in by_image.get(d.image_id, ()):
            if j in used:
                continue
            v = iou(d.box, gts[j].box)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            used.add(best)
        flags.append(best is not None)
    return flags


def average_precision_50(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_id: int = None) -> float:
    """All-point interpolated AP at IoU 0.5 for a single class."""
    if class_id is not None:
        dets = [d for d in dets if d.class_id == class_id]
        gts = [g for g in gts if g.class_id == class_id]
    if not gts or not dets:
        return 0.0
    tp = np.array(match_detections(dets, gts), dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def map50(dets: Sequence[Detection], gts: Sequence[GroundTruth], n_classes: int) -> ApResult:
    """Mean of per-class AP@0.5 over ``n_classes`` classes."""
    if n_classes < 1:
        raise InputError("n_classes must be >= 1")
    for kind, items in (("detection", dets), ("ground truth", gts)):
        for i, item in enumerate(items):
            if not 0 <= item.class_id < n_classes:
                raise InputError(f"{kind} {i}: class_id {item.class_id} outside [0, {n_classes})")
    aps = np.zeros(n_classes)
    empty = []
    for c in range(n_classes):
        gc = [g for g in gts if g.class_id == c]
        if not gc:
            empty.append(c)
            continue
        aps[c] = average_precision_50([d for d in dets if d.class_id == c], gc)
    return ApResult(aps, float(aps.mean()), n_classes, empty)


# --- JSON records ------------------------------------------------------------


def _parse_box(raw, where: str) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise InputError(f"{where}.box: expected [x1, y1, x2, y2]")
    try:
        return Box(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}.box: {exc}") from exc


def _parse_records(doc, fields: tuple, kind: str) -> list:
    if not isinstance(doc, list):
        raise InputError(f"{kind}: top level must be a list")
    out = []
    for i, rec in enumerate(doc):
        where = f"{kind}[{i}]"
        if not isinstance(rec, dict):
            raise InputError(f"{where}: expected an object")
        for f in fields:
            if f not in rec:
                raise InputError(f"{where}: missing field {f!r}")
        cid = rec["class_id"]
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise InputError(f"{where}.class_id: expected an integer")
        box = _parse_box(rec["box"], where)
        if kind == "detections":
            try:
                out.append(Detection(rec["image_id"], cid, box, float(rec["confidence"])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{where}.confidence: {exc}") from exc
        else:
            out.append(GroundTruth(rec["image_id"], cid, box))
    return out


def parse_detections(doc) -> list:
    return _parse_records(doc, ("image_id", "class_id", "box", "confidence"), "detections")


def parse_ground_truth(doc) -> list:
    return _parse_records(doc, ("image_id", "class_id", "box"), "ground_truth")


def load_detections(path) -> list:
    with open(path) as fh:
        return parse_detections(json.load(fh))


def load_ground_truth(path) -> list:
    with open(path) as fh:
        return parse_ground_truth(json.load(fh))
