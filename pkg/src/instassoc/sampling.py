"""Positive/negative reference-frame sample selection for the contrastive loss.

Each ground truth gets a dynamic number of positives (``m1``, the rounded sum
of its 10 largest IoUs against the predictions) taken as the lowest-cost
predictions, and ``Q - m2`` negatives taken as the highest-cost ones, where
``m2`` is the rounded sum of its 100 largest IoUs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box, as_boxes, box_iou, generalized_box_iou

TOP_POSITIVE_IOUS = 10
TOP_NEGATIVE_IOUS = 100


@dataclass
class Prediction:
    box: Box
    class_probs: np.ndarray
    embedding: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.box = Box(*map(float, self.box))
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64).reshape(-1)
        self.embedding = np.asarray(self.embedding, dtype=np.float64).reshape(-1)
        if np.any((self.class_probs < 0) | (self.class_probs > 1)):
            raise ValueError("class probabilities must lie in [0, 1]")


@dataclass
class GroundTruthInstance:
    box: Box
    class_id: int
    present: bool = True

    def __post_init__(self):
        self.box = Box(*map(float, self.box))


@dataclass
class CostWeights:
    w_cls: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0

    def __post_init__(self):
        if min(self.w_cls, self.w_l1, self.w_giou) < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass
class SelectionResult:
    positive_indices: list[int]
    negative_indices: list[int]
    m1: int
    m2: int

    def to_dict(self) -> dict:
        return {
            "positive_indices": list(self.positive_indices),
            "negative_indices": list(self.negative_indices),
            "m1": self.m1,
            "m2": self.m2,
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def cost_matrix(preds: Sequence[Prediction], gts: Sequence[GroundTruthInstance],
                w: CostWeights | None = None) -> np.ndarray:
    """Matching cost of every prediction against every ground truth, shape ``(Q, G)``."""
    w = w or CostWeights()
    pboxes = as_boxes([p.box for p in preds])
    gboxes = as_boxes([g.box for g in gts])
    probs = np.stack([p.class_probs for p in preds]) if preds else np.zeros((0, 0))
    classes = np.asarray([g.class_id for g in gts], dtype=np.int64)
    if len(classes) and len(preds) and (classes.min() < 0 or classes.max() >= probs.shape[1]):
        raise IndexError(f"ground-truth class id out of range for {probs.shape[1]} classes")

    cls_cost = 1.0 - probs[:, classes] if len(preds) else np.zeros((0, len(gts)))
    l1 = np.abs(pboxes[:, None, :] - gboxes[None, :, :]).mean(axis=-1)
    giou_cost = 1.0 - generalized_box_iou(pboxes, gboxes)
    return w.w_cls * cls_cost + w.w_l1 * l1 + w.w_giou * giou_cost


def matching_cost(pred: Prediction, gt: GroundTruthInstance, w: CostWeights | None = None) -> float:
    return float(cost_matrix([pred], [gt], w)[0, 0])


def dynamic_k(ious: np.ndarray, n_queries: int) -> tuple[int, int]:
    """Return ``(m1, m2)`` from a vector of IoUs against one ground truth."""
    ranked = np.sort(np.asarray(ious, dtype=np.float64))[::-1]
    m1 = _round_half_up(ranked[:TOP_POSITIVE_IOUS].sum())
    m2 = _round_half_up(ranked[:TOP_NEGATIVE_IOUS].sum())
    m1 = min(max(m1, 1), n_queries)
    m2 = min(max(m2, m1), n_queries)
    return m1, m2


def _select_from(costs: np.ndarray, ious: np.ndarray) -> SelectionResult:
    q = len(costs)
    m1, m2 = dynamic_k(ious, q)
    idx = np.arange(q)
    ascending = np.lexsort((idx, costs))
    descending = np.lexsort((idx, -costs))
    positives = [int(i) for i in ascending[:m1]]
    taken = set(positives)
    negatives = [int(i) for i in descending[: q - m2] if i not in taken]
    return SelectionResult(positives, negatives, m1, m2)


def select_samples(gt: GroundTruthInstance, preds: Sequence[Prediction],
                   w: CostWeights | None = None) -> SelectionResult:
    """Dynamic-k selection for one ground truth over ``Q = len(preds)`` predictions."""
    if not preds:
        raise ValueError("select_samples needs at least one prediction")
    if not gt.present:
        return SelectionResult([], [], 0, 0)
    costs = cost_matrix(preds, [gt], w)[:, 0]
    ious = box_iou(as_boxes([p.box for p in preds]), gt.box)[:, 0]
    return _select_from(costs, ious)


def select_samples_multi(gts: Sequence[GroundTruthInstance], preds: Sequence[Prediction],
                         w: CostWeights | None = None) -> list[SelectionResult]:
    """Per-ground-truth selection followed by a sequential conflict post-pass.

    A prediction chosen as positive for several ground truths stays with the
    one where its cost is lowest (ties: lower ground-truth index). The losers
    refill their positive sets from their next-lowest-cost predictions that no
    other ground truth holds as positive.
    """
    if not preds:
        raise ValueError("select_samples_multi needs at least one prediction")
    if not gts:
        return []
    costs = cost_matrix(preds, gts, w)
    ious = box_iou(as_boxes([p.box for p in preds]), as_boxes([g.box for g in gts]))
    results = [
        _select_from(costs[:, g], ious[:, g]) if gt.present else SelectionResult([], [], 0, 0)
        for g, gt in enumerate(gts)
    ]

    claims: dict[int, list[int]] = {}
    for g, res in enumerate(results):
        for p in res.positive_indices:
            claims.setdefault(p, []).append(g)
    owner = {p: min(gs, key=lambda g: (costs[p, g], g)) for p, gs in claims.items()}

    q = len(preds)
    idx = np.arange(q)
    for g, res in enumerate(results):
        lost = [p for p in res.positive_indices if owner[p] != g]
        if not lost:
            continue
        kept = [p for p in res.positive_indices if owner[p] == g]
        for p in np.lexsort((idx, costs[:, g])):
            if len(kept) == res.m1:
                break
            p = int(p)
            if p in kept or p in owner:
                continue
            kept.append(p)
            owner[p] = g
        taken = set(kept)
        descending = np.lexsort((idx, -costs[:, g]))
        res.positive_indices = kept
        res.negative_indices = [int(i) for i in descending[: q - res.m2] if i not in taken]
    return results


def fixed_threshold_selection(gt: GroundTruthInstance, preds: Sequence[Prediction],
                              pos_iou: float = 0.7, neg_iou: float = 0.3) -> SelectionResult:
    """Hand-set IoU rule: positive above ``pos_iou``, negative below ``neg_iou``."""
    if not gt.present:
        return SelectionResult([], [], 0, 0)
    ious = box_iou(as_boxes([p.box for p in preds]), gt.box)[:, 0]
    positives = [int(i) for i in np.flatnonzero(ious > pos_iou)]
    negatives = [int(i) for i in np.flatnonzero(ious < neg_iou)]
    return SelectionResult(positives, negatives, len(positives), len(preds) - len(negatives))


def count_conflicts(selections: Sequence[SelectionResult]) -> int:
    """Number of predictions that are positive for two or more ground truths."""
    counts: dict[int, int] = {}
    for res in selections:
        for p in res.positive_indices:
            counts[p] = counts.get(p, 0) + 1
    return sum(1 for c in counts.values() if c > 1)
