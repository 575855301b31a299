"""Axis-aligned box arithmetic: IoU, generalized IoU, L1 distance and NMS.

Boxes are corner-form ``(x1, y1, x2, y2)``. Zero-area boxes are legal and
have IoU 0 with everything, including an identical zero-area box.
"""

from __future__ import annotations

from typing import NamedTuple, Protocol, Sequence, TypeVar

import numpy as np


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls.validated(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @classmethod
    def validated(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        box = cls(float(x1), float(y1), float(x2), float(y2))
        if not np.all(np.isfinite(box)):
            raise ValueError(f"non-finite box coordinates: {box}")
        if box.x1 > box.x2 or box.y1 > box.y2:
            raise ValueError(f"box corners out of order: {box}")
        return box

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)


class _Scored(Protocol):
    box: Box
    score: float
    class_id: int


D = TypeVar("D", bound=_Scored)


def as_boxes(boxes) -> np.ndarray:
    """Coerce a box or a sequence of boxes into an ``(n, 4)`` float array."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        return np.zeros((0, 4), dtype=np.float64)
    if arr.shape[-1] != 4:
        raise ValueError(f"expected boxes with 4 coordinates, got shape {arr.shape}")
    return arr


def box_area(boxes: np.ndarray) -> np.ndarray:
    boxes = as_boxes(boxes)
    w = np.maximum(boxes[:, 2] - boxes[:, 0], 0.0)
    h = np.maximum(boxes[:, 3] - boxes[:, 1], 0.0)
    return w * h


def _inter_union(b1: np.ndarray, b2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # contiguous coordinate columns make the outer operations noticeably faster
    x1, y1, x2, y2 = np.ascontiguousarray(b1.T)
    u1, v1, u2, v2 = np.ascontiguousarray(b2.T)
    inter = np.minimum.outer(x2, u2)
    inter -= np.maximum.outer(x1, u1)
    np.maximum(inter, 0.0, out=inter)
    h = np.minimum.outer(y2, v2)
    h -= np.maximum.outer(y1, v1)
    np.maximum(h, 0.0, out=h)
    inter *= h
    area1 = np.maximum(x2 - x1, 0.0) * np.maximum(y2 - y1, 0.0)
    area2 = np.maximum(u2 - u1, 0.0) * np.maximum(v2 - v1, 0.0)
    union = np.add.outer(area1, area2)
    union -= inter
    return inter, union


def box_iou(boxes1, boxes2) -> np.ndarray:
    """Pairwise IoU matrix of shape ``(len(boxes1), len(boxes2))``."""
    b1, b2 = as_boxes(boxes1), as_boxes(boxes2)
    inter, union = _inter_union(b1, b2)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def generalized_box_iou(boxes1, boxes2) -> np.ndarray:
    """Pairwise generalized IoU in ``[-1, 1]``.

    A pair whose enclosing hull has zero area gets 0.
    """
    b1, b2 = as_boxes(boxes1), as_boxes(boxes2)
    inter, union = _inter_union(b1, b2)
    iou = np.zeros_like(inter)
    np.divide(inter, union, out=iou, where=union > 0)

    hull_w = np.maximum(b1[:, None, 2], b2[None, :, 2]) - np.minimum(b1[:, None, 0], b2[None, :, 0])
    hull_h = np.maximum(b1[:, None, 3], b2[None, :, 3]) - np.minimum(b1[:, None, 1], b2[None, :, 1])
    hull = np.maximum(hull_w, 0.0) * np.maximum(hull_h, 0.0)

    penalty = np.zeros_like(hull)
    np.divide(hull - union, hull, out=penalty, where=hull > 0)
    return np.where(hull > 0, iou - penalty, 0.0)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    return float(box_iou(a, b)[0, 0])


def giou(a: Sequence[float], b: Sequence[float]) -> float:
    return float(generalized_box_iou(a, b)[0, 0])


def l1_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Mean absolute difference over the four coordinates."""
    return float(np.mean(np.abs(as_boxes(a)[0] - as_boxes(b)[0])))


def nms_indices(
    boxes,
    scores,
    iou_threshold: float = 0.5,
    class_ids=None,
) -> np.ndarray:
    """Greedy NMS returning kept indices in selection order.

    Class-agnostic unless ``class_ids`` is given, in which case boxes only
    suppress boxes of the same class. Equal scores resolve to the lower index.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    boxes = as_boxes(boxes)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = len(scores)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if boxes.shape[0] != n:
        raise ValueError("boxes and scores differ in length")

    order = np.lexsort((np.arange(n), -scores))
    inter, union = _inter_union(boxes, boxes)
    # iou > t  <=>  inter > t * union for union > 0; both sides vanish otherwise
    union *= iou_threshold
    overlaps = inter > union
    if class_ids is not None:
        cls = np.asarray(class_ids)
        overlaps &= cls[:, None] == cls[None, :]

    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(idx)
        suppressed |= overlaps[idx]
    return np.asarray(keep, dtype=np.int64)


def nms(detections: Sequence[D], iou_threshold: float = 0.5, per_class: bool = False) -> list[D]:
    """Duplicate removal over objects exposing ``box``, ``score`` and ``class_id``."""
    if not detections:
        return []
    boxes = [d.box for d in detections]
    scores = [d.score for d in detections]
    classes = [d.class_id for d in detections] if per_class else None
    keep = nms_indices(boxes, scores, iou_threshold, classes)
    return [detections[i] for i in keep]
