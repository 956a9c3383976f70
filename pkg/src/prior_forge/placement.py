"""Downstream top-1 placement policy.

At edit time the highest-reward verified box is used directly, unless it
would collide with the dominant object already in the scene: the chosen
box must keep IoU below 0.5 with the largest detected background object,
whatever its class.
"""

from __future__ import annotations

from .geometry import BBox, iou
from .prior import SpatialPrior
from .verify import Detection

COLLISION_IOU = 0.5


def select_top1(prior: SpatialPrior,
                background_objects: list[Detection]) -> BBox | None:
    """Highest-reward entry that clears the largest background object.

    Entries are tried in descending reward order (ties toward the lower
    canonical index); returns None when the prior is empty or every entry
    collides.
    """
    if not prior.entries:
        return None
    ranked = sorted(prior.entries, key=lambda e: (-e.reward, e.proposal_index))
    if not background_objects:
        return ranked[0].verified_box
    largest = max(background_objects, key=lambda d: d.box.area)
    for entry in ranked:
        if iou(entry.verified_box, largest.box) < COLLISION_IOU:
            return entry.verified_box
    return None
