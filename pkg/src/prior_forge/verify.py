"""Verifier selection and pre-existing-object suppression.

Given the detections reported for an inpainted proposal, keep the one that
best matches the proposal region (if any clears the confidence threshold),
then discard it again if it merely re-detected an object that was already
present in the background.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import BBox, ConfigError, iou

PREEXISTING_IOU_CUTOFF = 0.5
DEFAULT_CONFIDENCE_THRESHOLD = 0.4


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float
    class_label: str

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class VerifiedPlacement:
    """Outcome of verifying one proposal; absent when no detection survived."""

    proposal_index: int
    verified_box: BBox | None = None
    confidence: float | None = None

    @property
    def present(self) -> bool:
        return self.verified_box is not None

    @classmethod
    def absent(cls, proposal_index: int) -> "VerifiedPlacement":
        return cls(proposal_index=proposal_index)


def select_verified(detections: list[Detection], proposal: BBox, class_label: str,
                    tau: float = DEFAULT_CONFIDENCE_THRESHOLD,
                    proposal_index: int = 0) -> VerifiedPlacement:
    """Pick the surviving detection with the highest IoU to the proposal.

    Detections below confidence tau (non-strict keep: psi >= tau) or of a
    different class are dropped; if none remain the placement is absent.
    IoU ties break by higher confidence, then by lower list index.
    """
    if not (0.0 <= tau <= 1.0):
        raise ConfigError(f"confidence threshold must be in [0,1], got {tau}")
    best = None
    best_key = None
    for idx, det in enumerate(detections):
        if det.class_label != class_label or det.confidence < tau:
            continue
        key = (iou(det.box, proposal), det.confidence, -idx)
        if best_key is None or key > best_key:
            best, best_key = det, key
    if best is None:
        return VerifiedPlacement.absent(proposal_index)
    return VerifiedPlacement(proposal_index, best.box, best.confidence)


def suppress_preexisting(candidate: VerifiedPlacement,
                         background_objects: list[Detection]) -> VerifiedPlacement:
    """Mark the placement absent if it overlaps a background object at IoU >= 0.5.

    Callers pass the same-class detections found on the un-inpainted
    background; anything the candidate coincides with was there all along.
    Idempotent and absorbing on absent placements.
    """
    if not candidate.present:
        return candidate
    for obj in background_objects:
        if iou(candidate.verified_box, obj.box) >= PREEXISTING_IOU_CUTOFF:
            return VerifiedPlacement.absent(candidate.proposal_index)
    return candidate
