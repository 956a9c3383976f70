"""Dense-prior evaluation metrics and dataset bias statistics.

The headline numbers are IoU@k (best achieved IoU among the top-k ranked
predictions), IoU50@k (fraction of instances whose top-k contain a hit at
IoU >= 0.50), and a mean average precision. mAP here is the repo's
benchmark definition: per instance, predictions are greedily one-to-one
matched to ground truth in rank order at each IoU threshold in
0.50:0.05:0.95, AP is the all-point interpolated area under the
precision-recall curve, averaged over thresholds and then instances.
All comparisons within this repo use this one definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, iou
from .pipeline import DatasetRecord

IOU_THRESHOLDS = [round(0.50 + 0.05 * i, 2) for i in range(10)]


@dataclass(frozen=True)
class EvalInstance:
    predictions: tuple[tuple[BBox, float], ...]  # kept sorted by score desc
    ground_truth: tuple[BBox, ...]

    def __post_init__(self):
        ranked = tuple(sorted(self.predictions, key=lambda p: -p[1]))
        object.__setattr__(self, "predictions", ranked)
        if any(not np.isfinite(s) for _, s in self.predictions):
            raise ValueError("prediction scores must be finite")


def iou_at_k(inst: EvalInstance, k: int) -> float:
    """Best IoU any of the top-k predictions achieves against any gt box."""
    best = 0.0
    for box, _ in inst.predictions[:k]:
        for gt in inst.ground_truth:
            best = max(best, iou(box, gt))
    return best


def iou50_at_k(instances: list[EvalInstance], k: int) -> float:
    """Percentage of instances with a top-k hit at IoU >= 0.50."""
    if not instances:
        return 0.0
    hits = sum(1 for inst in instances if iou_at_k(inst, k) >= 0.50)
    return 100.0 * hits / len(instances)


def _greedy_tp_flags(inst: EvalInstance, threshold: float) -> list[bool]:
    # rank order; each prediction may claim at most one unmatched gt
    taken = [False] * len(inst.ground_truth)
    flags = []
    for box, _ in inst.predictions:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(inst.ground_truth):
            if taken[j]:
                continue
            value = iou(box, gt)
            if value > best_iou:
                best_iou, best_j = value, j
        if best_j >= 0 and best_iou >= threshold:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(inst: EvalInstance, threshold: float) -> float:
    """All-point interpolated AP of one instance at one IoU threshold."""
    if not inst.predictions or not inst.ground_truth:
        return 0.0
    flags = _greedy_tp_flags(inst, threshold)
    tp = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    precision = tp / ranks
    recall = tp / len(inst.ground_truth)
    # precision envelope: best precision achievable at or beyond each rank
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(flags)):
        if flags[i]:
            ap += (recall[i] - prev_recall) * envelope[i]
            prev_recall = recall[i]
    return float(ap)


def mean_ap(instances: list[EvalInstance]) -> float:
    """Percentage mAP over IoU thresholds 0.50:0.05:0.95, then instances."""
    if not instances:
        return 0.0
    per_instance = [
        float(np.mean([average_precision(inst, t) for t in IOU_THRESHOLDS]))
        for inst in instances]
    return 100.0 * float(np.mean(per_instance))


def center_histogram(records: list[DatasetRecord], bins: int) -> np.ndarray:
    """2D counts of positive verified-box centers in normalized coordinates.

    Rows index the y axis (top to bottom), columns the x axis.
    """
    xs, ys = [], []
    for rec in records:
        for entry in rec.positives():
            cx, cy = entry.verified.center
            xs.append(cx / rec.image_side)
            ys.append(cy / rec.image_side)
    grid, _, _ = np.histogram2d(ys, xs, bins=bins, range=[[0, 1], [0, 1]])
    return grid


def area_density(records: list[DatasetRecord],
                 log_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Density of relative box area over log-spaced bins across [1e-4, 1]."""
    edges = np.logspace(-4.0, 0.0, log_bins + 1)
    areas = [entry.verified.area / (rec.image_side ** 2)
             for rec in records for entry in rec.positives()]
    if not areas:
        return np.zeros(log_bins), edges
    density, _ = np.histogram(areas, bins=edges, density=True)
    return density, edges
