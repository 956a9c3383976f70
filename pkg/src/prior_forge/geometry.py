"""Axis-aligned box arithmetic and the sliding-window proposal generator.

Boxes are (x, y, w, h) in pixel units with a top-left origin. Coordinates
stay in floating point; rounding happens only at rasterization or
serialization time, since scale/ratio-derived widths are irrational.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


class BBox(namedtuple("BBox", ("x", "y", "w", "h"))):
    """Axis-aligned box: top-left corner (x, y), width w > 0, height h > 0.

    A lightweight tuple so the proposal generator can emit thousands of
    boxes per scene cheaply; coordinates are always stored as floats.
    """

    __slots__ = ()

    def __new__(cls, x, y, w, h):
        w, h = float(w), float(h)
        if w <= 0.0 or h <= 0.0:
            raise ValueError(f"box needs positive size, got w={w}, h={h}")
        return tuple.__new__(cls, (float(x), float(y), w, h))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def contained_in(self, side: float) -> bool:
        """True if the box lies inside [0, side] x [0, side] (closed bounds)."""
        return self.x >= 0 and self.y >= 0 and self.x2 <= side and self.y2 <= side

    def to_json(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_json(cls, arr) -> "BBox":
        x, y, w, h = arr
        return cls(float(x), float(y), float(w), float(h))


def _inter_union(a: BBox, b: BBox) -> tuple[float, float]:
    # derive every extent from the same corner coordinates, so identical
    # boxes give inter == union exactly despite x+w rounding
    ax2, ay2, bx2, by2 = a.x2, a.y2, b.x2, b.y2
    area_a = (ax2 - a.x) * (ay2 - a.y)
    area_b = (bx2 - b.x) * (by2 - b.y)
    ix = min(ax2, bx2) - max(a.x, b.x)
    iy = min(ay2, by2) - max(a.y, b.y)
    inter = ix * iy if (ix > 0 and iy > 0) else 0.0
    return inter, area_a + area_b - inter


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter, union = _inter_union(a, b)
    return min(1.0, inter / union)


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: iou minus the empty fraction of the smallest enclosing box.

    Ranges over [-1, 1] and never exceeds iou; equals iou when the union
    fills the enclosing box, and goes negative for far-apart boxes.
    """
    inter, union = _inter_union(a, b)
    cw = max(a.x2, b.x2) - min(a.x, b.x)
    ch = max(a.y2, b.y2) - min(a.y, b.y)
    enclosing = cw * ch
    return min(1.0, inter / union) - (enclosing - union) / enclosing


DEFAULT_ASPECT_RATIOS: tuple[tuple[float, float], ...] = ((1, 1), (2, 1), (1, 2))


@dataclass(frozen=True)
class ProposalConfig:
    """Sliding-window grid configuration.

    The anchor grid is G x G with G = floor(sqrt(floor(target_count / 3))),
    anchors at (k + 0.5) * image_side / G on both axes. Per anchor, one
    candidate per (scale, ratio) pair; scales are linearly spaced inclusive
    of both endpoints. Candidates not fully inside the image are pruned.
    """

    image_side: float
    target_count: int
    scale_min: float
    scale_max: float
    num_scales: int = 5
    aspect_ratios: tuple[tuple[float, float], ...] = DEFAULT_ASPECT_RATIOS

    def __post_init__(self):
        if self.image_side <= 0:
            raise ConfigError("image_side must be positive")
        if self.target_count < 3:
            raise ConfigError("target_count must be >= 3")
        if self.scale_min > self.scale_max:
            raise ConfigError("scale_min must not exceed scale_max")
        if self.scale_min <= 0:
            raise ConfigError("scales must be positive")
        if self.num_scales < 1:
            raise ConfigError("num_scales must be >= 1")
        if not self.aspect_ratios:
            raise ConfigError("need at least one aspect ratio")
        object.__setattr__(self, "aspect_ratios",
                           tuple((float(rw), float(rh)) for rw, rh in self.aspect_ratios))

    @property
    def grid_size(self) -> int:
        return math.floor(math.sqrt(self.target_count // 3))

    def scales(self) -> list[float]:
        if self.num_scales == 1:
            return [float(self.scale_min)]
        step = (self.scale_max - self.scale_min) / (self.num_scales - 1)
        return [self.scale_min + i * step for i in range(self.num_scales)]

    @classmethod
    def reference_default(cls) -> "ProposalConfig":
        return cls(image_side=512, target_count=435, scale_min=64, scale_max=256)


def generate_proposals(cfg: ProposalConfig) -> list[BBox]:
    """Generate the canonical ordered proposal set for a grid config.

    Order is anchor row-major (y outer, x inner), then scale ascending,
    then aspect ratio in configured order. The output is a pure function
    of cfg: identical across runs, platforms, and thread counts.
    """
    g = cfg.grid_size
    side = float(cfg.image_side)
    stride = side / g
    scales = cfg.scales()
    shapes = [(s * math.sqrt(rw / rh), s * math.sqrt(rh / rw))
              for s in scales for (rw, rh) in cfg.aspect_ratios]
    new_box = tuple.__new__  # kept boxes are valid by construction
    out: list[BBox] = []
    for gy in range(g):
        ay = (gy + 0.5) * stride
        for gx in range(g):
            ax = (gx + 0.5) * stride
            for w, h in shapes:
                x = ax - w / 2.0
                y = ay - h / 2.0
                if x >= 0 and y >= 0 and x + w <= side and y + h <= side:
                    out.append(new_box(BBox, (x, y, w, h)))
    return out
