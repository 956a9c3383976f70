"""Deterministic synthetic-scene simulator backend.

Stands in for the diffusion inpainter / open-set detector / preference
ranker stack at desk scale. Every scene carries ground truth (per-class
support regions), so end-to-end tests can check extracted priors against
an oracle. All randomness is derived from counter-style keys of
(seed, scene_id, class, proposal_index, op): results never depend on
request order, thread count, or platform.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import BBox
from ..verify import Detection
from .protocol import ERROR, OK, REFUSED, WorkerRequest, WorkerResponse

# Divergence gap distributions: successful insertions separate from failed
# ones, and the separation tightens over the first denoising steps.
SUCCESS_DELTA_MEAN = 1.47
FAILURE_DELTA_MEAN = 0.38
DELTA_SIGMA_SCHEDULE = (0.86, 0.61, 0.44, 0.40, 0.37)

AREA_BAND = (0.25, 4.0)  # acceptable box area relative to nominal


@dataclass(frozen=True)
class SupportRegion:
    class_label: str
    region: BBox
    peak_reward: float


@dataclass(frozen=True)
class PlantedObject:
    """Same-class object already present in the background scene."""

    class_label: str
    box: BBox
    confidence: float = 0.9


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: str
    side: float
    supports: tuple[SupportRegion, ...]
    detector_noise: float = 2.0
    rng_seed: int = 0
    nominal_area: float = 400.0
    background_objects: tuple[PlantedObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for sup in self.supports:
            if not sup.region.contained_in(self.side):
                raise ValueError(f"support region for {sup.class_label!r} "
                                 f"exceeds the {self.side}px image")

    def support_for(self, class_label: str) -> SupportRegion | None:
        for sup in self.supports:
            if sup.class_label == class_label:
                return sup
        return None

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "side": self.side,
            "supports": [{"class": s.class_label, "region": s.region.to_json(),
                          "peak_reward": s.peak_reward} for s in self.supports],
            "detector_noise": self.detector_noise,
            "rng_seed": self.rng_seed,
            "nominal_area": self.nominal_area,
            "background_objects": [{"class": o.class_label, "box": o.box.to_json(),
                                    "confidence": o.confidence}
                                   for o in self.background_objects],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticScene":
        return cls(
            scene_id=obj["scene_id"],
            side=float(obj["side"]),
            supports=tuple(SupportRegion(s["class"], BBox.from_json(s["region"]),
                                         float(s["peak_reward"]))
                           for s in obj["supports"]),
            detector_noise=float(obj.get("detector_noise", 2.0)),
            rng_seed=int(obj.get("rng_seed", 0)),
            nominal_area=float(obj.get("nominal_area", 400.0)),
            background_objects=tuple(
                PlantedObject(o["class"], BBox.from_json(o["box"]),
                              float(o.get("confidence", 0.9)))
                for o in obj.get("background_objects", [])),
        )


def _rng(seed: int, scene_id: str, class_label: str, proposal_index: int, op: str):
    digest = hashlib.sha256(
        f"{scene_id}\x1f{class_label}\x1f{op}".encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
    entropy = [seed & 0xFFFFFFFF, proposal_index & 0xFFFFFFFF, *words]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _insertion_ref(scene_id: str, class_label: str, proposal_index: int,
                   box: BBox) -> str:
    # json round-trips the exact float values, so refs stay stateless
    return "sim:" + json.dumps([scene_id, class_label, proposal_index,
                                box.to_json()])


def _parse_ref(image_ref: str):
    scene_id, class_label, proposal_index, box = json.loads(image_ref[len("sim:"):])
    return scene_id, class_label, int(proposal_index), BBox.from_json(box)


def _center_affinity(box: BBox, region: BBox) -> float:
    """1 at the region center, 0 at (and beyond) its half-diagonal."""
    cx, cy = box.center
    rx, ry = region.center
    half_diag = math.hypot(region.w, region.h) / 2.0
    dist = math.hypot(cx - rx, cy - ry)
    return max(0.0, 1.0 - dist / half_diag)


def sim_inpaint(scene: SyntheticScene, box: BBox, class_label: str,
                proposal_index: int = 0) -> tuple[str, str | None]:
    """OK iff the box center falls in the class support region and the box
    area is within the configured band around the nominal area; the image
    reference encodes everything needed to re-derive the outcome later."""
    if not box.contained_in(scene.side):
        return REFUSED, None
    sup = scene.support_for(class_label)
    if sup is None:
        return REFUSED, None
    cx, cy = box.center
    r = sup.region
    if not (r.x <= cx < r.x2 and r.y <= cy < r.y2):
        return REFUSED, None
    lo, hi = AREA_BAND
    if not (lo * scene.nominal_area <= box.area <= hi * scene.nominal_area):
        return REFUSED, None
    return OK, _insertion_ref(scene.scene_id, class_label, proposal_index, box)


def sim_detect(scene: SyntheticScene, image_ref: str,
               class_label: str) -> tuple[Detection, ...]:
    """Detections on a referenced image.

    The raw background (image_ref equal to the scene id) yields the planted
    objects of the class. A successful insertion yields its box jittered by
    at most detector_noise px per coordinate, with confidence decreasing in
    distance from the support-region center; failed insertions yield nothing.
    """
    if image_ref == scene.scene_id:
        return tuple(Detection(o.box, o.confidence, o.class_label)
                     for o in scene.background_objects
                     if o.class_label == class_label)
    _, ref_class, proposal_index, box = _parse_ref(image_ref)
    status, _ = sim_inpaint(scene, box, ref_class, proposal_index)
    if status != OK or ref_class != class_label:
        return ()
    sup = scene.support_for(ref_class)
    rng = _rng(scene.rng_seed, scene.scene_id, ref_class, proposal_index, "detect")
    jitter = rng.uniform(-scene.detector_noise, scene.detector_noise, size=4)
    jittered = BBox(box.x + jitter[0], box.y + jitter[1],
                    max(1e-6, box.w + jitter[2]), max(1e-6, box.h + jitter[3]))
    confidence = 0.5 + 0.5 * _center_affinity(box, sup.region)
    return (Detection(jittered, min(1.0, confidence), ref_class),)


def sim_rank(scene: SyntheticScene, image_ref: str, class_label: str) -> float:
    """Reward of an inpainted image: peak reward scaled by center affinity."""
    if image_ref == scene.scene_id:
        return 0.0
    _, ref_class, _, box = _parse_ref(image_ref)
    sup = scene.support_for(ref_class)
    if sup is None:
        return 0.0
    return sup.peak_reward * _center_affinity(box, sup.region)


def sample_divergence(success: bool, steps: int, rng) -> tuple[float, ...]:
    """Per-step divergence gaps, clipped at zero."""
    mean = SUCCESS_DELTA_MEAN if success else FAILURE_DELTA_MEAN
    out = []
    for t in range(steps):
        sigma = DELTA_SIGMA_SCHEDULE[min(t, len(DELTA_SIGMA_SCHEDULE) - 1)]
        out.append(max(0.0, float(rng.normal(mean, sigma))))
    return tuple(out)


def sim_divergence(scene: SyntheticScene, box: BBox, class_label: str,
                   steps: int, proposal_index: int = 0) -> tuple[float, ...]:
    status, _ = sim_inpaint(scene, box, class_label, proposal_index)
    rng = _rng(scene.rng_seed, scene.scene_id, class_label, proposal_index,
               "divergence")
    return sample_divergence(status == OK, steps, rng)


def render_scene(scene: SyntheticScene, out_side: int = 64) -> np.ndarray:
    """Rasterize the scene to a uint8 grayscale grid for model inputs.

    Support regions render as class-keyed gray plateaus, planted objects as
    bright rectangles; purely deterministic so exports are reproducible.
    """
    img = np.full((out_side, out_side), 16, dtype=np.uint8)
    scale = out_side / scene.side

    def span(lo: float, hi: float) -> tuple[int, int]:
        a = max(0, int(math.floor(lo * scale)))
        b = min(out_side, int(math.ceil(hi * scale)))
        return a, b

    for sup in scene.supports:
        shade = 64 + int.from_bytes(
            hashlib.sha256(sup.class_label.encode()).digest()[:2], "big") % 128
        x0, x1 = span(sup.region.x, sup.region.x2)
        y0, y1 = span(sup.region.y, sup.region.y2)
        img[y0:y1, x0:x1] = shade
    for obj in scene.background_objects:
        x0, x1 = span(obj.box.x, obj.box.x2)
        y0, y1 = span(obj.box.y, obj.box.y2)
        img[y0:y1, x0:x1] = 240
    return img


class SimBackend:
    """In-process backend over a set of synthetic scenes."""

    def __init__(self, scenes: dict[str, SyntheticScene]):
        self.scenes = dict(scenes)

    def _scene(self, scene_ref: str) -> SyntheticScene:
        return self.scenes[scene_ref]

    def register_scene(self, scene: SyntheticScene) -> None:
        self.scenes[scene.scene_id] = scene

    def inpaint(self, scene_ref: str, box: BBox, class_label: str,
                proposal_index: int = 0) -> tuple[str, str | None]:
        return sim_inpaint(self._scene(scene_ref), box, class_label, proposal_index)

    def detect(self, scene_ref: str, image_ref: str,
               class_label: str) -> tuple[Detection, ...]:
        return sim_detect(self._scene(scene_ref), image_ref, class_label)

    def rank(self, scene_ref: str, image_ref: str, class_label: str) -> float:
        return sim_rank(self._scene(scene_ref), image_ref, class_label)

    def divergence(self, scene_ref: str, box: BBox, class_label: str,
                   steps: int, proposal_index: int = 0) -> tuple[float, ...]:
        return sim_divergence(self._scene(scene_ref), box, class_label,
                              steps, proposal_index)

    def close(self):
        pass

    def handle(self, request: WorkerRequest) -> WorkerResponse:
        """Serve one protocol request (shared by the subprocess worker)."""
        try:
            if request.op == "inpaint":
                status, ref = self.inpaint(request.scene_ref, request.box,
                                           request.class_label,
                                           request.proposal_index or 0)
                return WorkerResponse(status=status, image_ref=ref)
            if request.op == "detect":
                dets = self.detect(request.scene_ref, request.image_ref,
                                   request.class_label)
                return WorkerResponse(status=OK, detections=dets)
            if request.op == "rank":
                reward = self.rank(request.scene_ref, request.image_ref,
                                   request.class_label)
                return WorkerResponse(status=OK, reward=reward)
            if request.op == "divergence":
                deltas = self.divergence(request.scene_ref, request.box,
                                         request.class_label, request.steps,
                                         request.proposal_index or 0)
                return WorkerResponse(status=OK, deltas=deltas)
            return WorkerResponse(status=ERROR, error=f"unknown op {request.op}")
        except KeyError as exc:
            return WorkerResponse(status=ERROR, error=f"unknown scene: {exc}")
