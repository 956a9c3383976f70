"""Spatial prior assembly and heatmap rasterization.

A spatial prior is the per-(scene, class) set of verified placements with
their reward and confidence. Heatmaps are built by softmax-normalizing
rewards over retained entries and accumulating each entry's weight over
the pixels its verified box covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox
from .verify import VerifiedPlacement

DEFAULT_CONF_MIN = 0.4
DEFAULT_REWARD_MIN = 0.0


@dataclass(frozen=True)
class PriorEntry:
    proposal_index: int
    verified_box: BBox
    reward: float
    confidence: float


@dataclass(frozen=True)
class SpatialPrior:
    scene_id: str
    class_label: str
    entries: tuple[PriorEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        indices = [e.proposal_index for e in self.entries]
        if len(set(indices)) != len(indices):
            raise ValueError("duplicate proposal_index in prior entries")

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "class": self.class_label,
            "entries": [{"proposal_index": e.proposal_index,
                         "verified_box": e.verified_box.to_json(),
                         "reward": e.reward,
                         "confidence": e.confidence} for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SpatialPrior":
        entries = tuple(
            PriorEntry(int(e["proposal_index"]), BBox.from_json(e["verified_box"]),
                       float(e["reward"]), float(e["confidence"]))
            for e in obj["entries"])
        return cls(obj["scene_id"], obj["class"], entries)


@dataclass(frozen=True)
class Heatmap:
    """Dense grid of values; normalized maps have min 0 and max 1 (or all zeros)."""

    width: int
    height: int
    values: np.ndarray

    def to_pgm(self) -> bytes:
        """Binary P5 PGM, values linearly mapped to 0..255, row-major."""
        levels = np.round(np.clip(self.values, 0.0, 1.0) * 255.0).astype(np.uint8)
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + levels.tobytes()


def assemble_prior(placements: list[VerifiedPlacement], rewards: list[float],
                   scene_id: str, class_label: str) -> SpatialPrior:
    """Keep exactly the present placements, paired index-wise with rewards.

    No reward filtering happens here; negative-reward placements stay in
    the prior and are only dropped later at rasterization/supervision time.
    """
    if len(placements) != len(rewards):
        raise ValueError(f"{len(placements)} placements vs {len(rewards)} rewards")
    entries = [PriorEntry(p.proposal_index, p.verified_box, float(r), p.confidence)
               for p, r in zip(placements, rewards) if p.present]
    return SpatialPrior(scene_id, class_label, tuple(entries))


def softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    e = np.exp(shifted)
    return e / e.sum()


def _retained(prior: SpatialPrior, conf_min: float, reward_min: float) -> list[PriorEntry]:
    return [e for e in prior.entries if e.confidence > conf_min and e.reward > reward_min]


def _pixel_span(lo_edge: float, hi_edge: float, limit: int) -> tuple[int, int]:
    # pixel p covered iff its center p + 0.5 lies in the half-open [lo, hi)
    lo = max(0, math.ceil(lo_edge - 0.5))
    hi = min(limit, math.ceil(hi_edge - 0.5))
    return lo, hi


def accumulate_density(prior: SpatialPrior, width: int, height: int,
                       conf_min: float = DEFAULT_CONF_MIN,
                       reward_min: float = DEFAULT_REWARD_MIN) -> np.ndarray:
    """Un-normalized density: softmax reward weights summed over box pixels."""
    grid = np.zeros((height, width), dtype=np.float64)
    entries = _retained(prior, conf_min, reward_min)
    if not entries:
        return grid
    weights = softmax(np.array([e.reward for e in entries], dtype=np.float64))
    for entry, weight in zip(entries, weights):
        b = entry.verified_box
        x0, x1 = _pixel_span(b.x, b.x2, width)
        y0, y1 = _pixel_span(b.y, b.y2, height)
        if x0 < x1 and y0 < y1:
            grid[y0:y1, x0:x1] += weight
    return grid


def _minmax(grid: np.ndarray) -> np.ndarray:
    lo, hi = grid.min(), grid.max()
    if hi == lo:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def rasterize_heatmap(prior: SpatialPrior, width: int, height: int,
                      conf_min: float = DEFAULT_CONF_MIN,
                      reward_min: float = DEFAULT_REWARD_MIN) -> Heatmap:
    """Min-max normalized density map of one prior.

    Entries must clear both filters (confidence strictly above conf_min,
    reward strictly above reward_min) to contribute; with nothing retained
    the map is all zeros. Constant maps also normalize to all zeros.
    """
    grid = accumulate_density(prior, width, height, conf_min, reward_min)
    return Heatmap(width, height, _minmax(grid))


def aggregate_class_prior(priors: list[SpatialPrior], class_label: str,
                          width: int, height: int,
                          conf_min: float = DEFAULT_CONF_MIN,
                          reward_min: float = DEFAULT_REWARD_MIN) -> Heatmap:
    """Mean of the per-prior un-normalized densities, normalized once at the end.

    Normalizing per image first would over-weight sparse priors, so the
    min-max step happens only after averaging.
    """
    selected = [p for p in priors if p.class_label == class_label]
    if not selected:
        return Heatmap(width, height, np.zeros((height, width), dtype=np.float64))
    acc = np.zeros((height, width), dtype=np.float64)
    for p in selected:
        acc += accumulate_density(p, width, height, conf_min, reward_min)
    acc /= len(selected)
    return Heatmap(width, height, _minmax(acc))
