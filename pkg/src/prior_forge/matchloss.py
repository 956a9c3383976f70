"""Bipartite matching and reward-weighted losses for prior distillation.

Predicted and supervision boxes live in normalized [0, 1] coordinates as
(x, y, w, h). Matching minimizes a weighted L1 + GIoU cost; the box loss
weights each matched pair by 0.5 + 0.5 * R of its supervision reward, and
the plausibility head regresses each query's best achievable IoU against
the supervision set. Total objective: bbox loss + 0.5 * plausibility MSE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, giou, iou
from .prior import SpatialPrior

L1_WEIGHT = 5.0
GIOU_WEIGHT = 2.0
PLAUSIBILITY_WEIGHT = 0.5
DEFAULT_TOP_K = 20


@dataclass(frozen=True)
class PredictionSet:
    boxes: tuple[BBox, ...]
    plausibility_logits: tuple[float, ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.plausibility_logits):
            raise ValueError("one logit per predicted box required")


@dataclass(frozen=True)
class SupervisionSet:
    boxes: tuple[BBox, ...]
    rewards: tuple[float, ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.rewards):
            raise ValueError("one reward per supervision box required")
        if any(not (0.0 <= r <= 1.0) for r in self.rewards):
            raise ValueError("supervision rewards must be normalized to [0,1]")


@dataclass(frozen=True)
class MatchAssignment:
    pairs: tuple[tuple[int, int], ...]  # (prediction_index, supervision_index)
    total_cost: float


def select_supervision(prior: SpatialPrior, image_side: float,
                       k: int = DEFAULT_TOP_K) -> SupervisionSet:
    """Top-k prior entries by reward, as normalized supervision.

    Reward ties break toward the lower canonical proposal index. Rewards
    are min-max normalized within the instance; if all rewards are equal
    they map to 0 (the weighting rule then gives every pair 0.5).
    Coordinates are divided by the image side.
    """
    ranked = sorted(prior.entries, key=lambda e: (-e.reward, e.proposal_index))
    chosen = ranked[:k]
    if not chosen:
        return SupervisionSet((), ())
    rewards = np.array([e.reward for e in chosen], dtype=np.float64)
    lo, hi = rewards.min(), rewards.max()
    normalized = np.zeros_like(rewards) if hi == lo else (rewards - lo) / (hi - lo)
    boxes = tuple(BBox(e.verified_box.x / image_side, e.verified_box.y / image_side,
                       e.verified_box.w / image_side, e.verified_box.h / image_side)
                  for e in chosen)
    return SupervisionSet(boxes, tuple(float(r) for r in normalized))


def match_cost(pred: BBox, gt: BBox, l1_weight: float = L1_WEIGHT,
               giou_weight: float = GIOU_WEIGHT) -> float:
    l1 = (abs(pred.x - gt.x) + abs(pred.y - gt.y)
          + abs(pred.w - gt.w) + abs(pred.h - gt.h))
    return l1_weight * l1 + giou_weight * (1.0 - giou(pred, gt))


def hungarian_match(preds: PredictionSet, sup: SupervisionSet) -> MatchAssignment:
    """Minimum-cost assignment of supervision boxes to distinct predictions."""
    if not sup.boxes:
        return MatchAssignment((), 0.0)
    cost = np.array([[match_cost(p, g) for g in sup.boxes] for p in preds.boxes])
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist()), key=lambda p: p[1]))
    total = math.fsum(cost[pi, si] for pi, si in pairs)
    return MatchAssignment(pairs, total)


def bbox_loss(assignment: MatchAssignment, preds: PredictionSet,
              sup: SupervisionSet) -> float:
    """Mean over matched pairs of the reward-weighted L1 + GIoU loss."""
    if not assignment.pairs:
        return 0.0
    total = 0.0
    for pi, si in assignment.pairs:
        weight = 0.5 + 0.5 * sup.rewards[si]
        total += weight * match_cost(preds.boxes[pi], sup.boxes[si])
    return total / len(assignment.pairs)


def plausibility_targets(preds: PredictionSet, sup: SupervisionSet) -> list[float]:
    """Per query, the maximum IoU against any supervision box."""
    if not sup.boxes:
        return [0.0] * len(preds.boxes)
    return [max(iou(p, g) for g in sup.boxes) for p in preds.boxes]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def plausibility_loss(preds: PredictionSet, sup: SupervisionSet) -> float:
    """MSE between sigmoid(logit) and the max-IoU target, over all queries."""
    if not preds.boxes:
        return 0.0
    targets = np.array(plausibility_targets(preds, sup), dtype=np.float64)
    scores = _sigmoid(np.array(preds.plausibility_logits, dtype=np.float64))
    return float(np.mean((scores - targets) ** 2))


def total_loss(preds: PredictionSet, sup: SupervisionSet) -> float:
    assignment = hungarian_match(preds, sup)
    return (bbox_loss(assignment, preds, sup)
            + PLAUSIBILITY_WEIGHT * plausibility_loss(preds, sup))


def loss_reference(preds: PredictionSet, sup: SupervisionSet) -> dict:
    """Canonical expected-loss vector for cross-checking external trainers."""
    assignment = hungarian_match(preds, sup)
    return {
        "bbox_loss": bbox_loss(assignment, preds, sup),
        "plausibility_loss": plausibility_loss(preds, sup),
        "total_loss": total_loss(preds, sup),
        "matches": [list(p) for p in assignment.pairs],
        "match_total_cost": assignment.total_cost,
        "plausibility_targets": plausibility_targets(preds, sup),
    }


def case_from_json(obj: dict) -> tuple[PredictionSet, SupervisionSet]:
    preds = PredictionSet(
        boxes=tuple(BBox.from_json(b) for b in obj["predictions"]["boxes"]),
        plausibility_logits=tuple(float(x)
                                  for x in obj["predictions"]["logits"]))
    sup = SupervisionSet(
        boxes=tuple(BBox.from_json(b) for b in obj["supervision"]["boxes"]),
        rewards=tuple(float(r) for r in obj["supervision"]["rewards"]))
    return preds, sup


def case_to_json(preds: PredictionSet, sup: SupervisionSet) -> dict:
    return {
        "predictions": {"boxes": [b.to_json() for b in preds.boxes],
                        "logits": list(preds.plausibility_logits)},
        "supervision": {"boxes": [b.to_json() for b in sup.boxes],
                        "rewards": list(sup.rewards)},
    }


def emit_loss_reference(case_path: str, out_path: str) -> dict:
    with open(case_path, encoding="utf-8") as fp:
        preds, sup = case_from_json(json.load(fp))
    ref = loss_reference(preds, sup)
    with open(out_path, "w", encoding="utf-8") as fp:
        json.dump(ref, fp, indent=2)
        fp.write("\n")
    return ref
