"""End-to-end orchestration: proposals -> early-stop -> inpaint -> verify ->
suppress -> rank -> prior assembly -> dataset persistence.

Scenes are independent work units processed by a thread pool; per-scene
results are merged in canonical scene order before writing, so dataset
files are byte-identical regardless of worker count. Negatives are stored
explicitly (verified = null) because downstream consumers need the dense
negative set, not just the positives.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import WorkerFailure
from .backends.sim import PlantedObject, SupportRegion, SyntheticScene
from .geometry import BBox, ProposalConfig, generate_proposals
from .prior import PriorEntry, SpatialPrior
from .verify import (DEFAULT_CONFIDENCE_THRESHOLD, VerifiedPlacement,
                     select_verified, suppress_preexisting)

log = logging.getLogger("prior_forge.pipeline")

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT_RATIOS = (0.85, 0.10, 0.05)


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Taxonomy:
    """Mapping from object class to the background classes it may appear in."""

    pairs: dict[str, tuple[str, ...]]

    def __post_init__(self):
        normalized = {}
        for obj, backgrounds in self.pairs.items():
            backgrounds = tuple(backgrounds)
            if not backgrounds:
                raise TaxonomyError(f"object class {obj!r} allows no backgrounds")
            normalized[obj] = backgrounds
        object.__setattr__(self, "pairs", normalized)

    def permits(self, object_class: str, background_class: str) -> bool:
        return background_class in self.pairs.get(object_class, ())

    def object_classes(self) -> list[str]:
        return sorted(self.pairs)

    def background_classes(self) -> list[str]:
        return sorted({bg for bgs in self.pairs.values() for bg in bgs})

    @classmethod
    def from_json(cls, obj: dict) -> "Taxonomy":
        return cls({k: tuple(v) for k, v in obj.items()})


@dataclass(frozen=True)
class RecordEntry:
    proposal: BBox
    verified: BBox | None = None
    confidence: float | None = None
    reward: float | None = None

    @property
    def positive(self) -> bool:
        return self.verified is not None


@dataclass(frozen=True)
class DatasetRecord:
    scene_id: str
    background_class: str
    object_class: str
    image_side: float
    entries: tuple[RecordEntry, ...]
    split: str | None = None

    def positives(self) -> list[RecordEntry]:
        return [e for e in self.entries if e.positive]

    def to_prior(self) -> SpatialPrior:
        entries = tuple(
            PriorEntry(i, e.verified, e.reward, e.confidence)
            for i, e in enumerate(self.entries) if e.positive)
        return SpatialPrior(self.scene_id, self.object_class, entries)

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "background_class": self.background_class,
            "object_class": self.object_class,
            "image_side": self.image_side,
            "split": self.split,
            "entries": [
                {"proposal": e.proposal.to_json(),
                 "verified": None if e.verified is None else e.verified.to_json(),
                 "confidence": e.confidence,
                 "reward": e.reward}
                for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetRecord":
        entries = tuple(
            RecordEntry(
                proposal=BBox.from_json(e["proposal"]),
                verified=None if e.get("verified") is None
                else BBox.from_json(e["verified"]),
                confidence=e.get("confidence"),
                reward=e.get("reward"))
            for e in obj["entries"])
        return cls(obj["scene_id"], obj["background_class"], obj["object_class"],
                   float(obj["image_side"]), entries, obj.get("split"))


@dataclass(frozen=True)
class EarlyStopConfig:
    enabled: bool = False
    threshold: float = 0.0
    step: int = 0


@dataclass(frozen=True)
class SimSceneConfig:
    """How synthetic scenes are drawn in sim mode (all seeded)."""

    region_frac: tuple[float, float] = (0.45, 0.60)
    peak_reward: tuple[float, float] = (0.6, 1.0)
    detector_noise: float = 1.5
    nominal_area: float = 400.0
    plant_probability: float = 0.5
    plant_confidence: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    proposal: ProposalConfig
    taxonomy: Taxonomy
    scene_count: int = 20
    tau: float = DEFAULT_CONFIDENCE_THRESHOLD
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    sim: SimSceneConfig = field(default_factory=SimSceneConfig)
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    backgrounds: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        prop = obj["proposal"]
        proposal = ProposalConfig(
            image_side=prop["image_side"],
            target_count=prop["target_count"],
            scale_min=prop["scale_min"],
            scale_max=prop["scale_max"],
            num_scales=prop.get("num_scales", 5),
            aspect_ratios=tuple(tuple(r) for r in prop.get(
                "aspect_ratios", [[1, 1], [2, 1], [1, 2]])))
        es = obj.get("early_stop", {})
        sim = obj.get("sim", {})
        return cls(
            proposal=proposal,
            taxonomy=Taxonomy.from_json(obj["taxonomy"]),
            scene_count=obj.get("scene_count", 20),
            tau=obj.get("tau", DEFAULT_CONFIDENCE_THRESHOLD),
            early_stop=EarlyStopConfig(
                enabled=es.get("enabled", False),
                threshold=es.get("threshold", 0.0),
                step=es.get("step", 0)),
            sim=SimSceneConfig(
                region_frac=tuple(sim.get("region_frac", (0.45, 0.60))),
                peak_reward=tuple(sim.get("peak_reward", (0.6, 1.0))),
                detector_noise=sim.get("detector_noise", 1.5),
                nominal_area=sim.get("nominal_area", 400.0),
                plant_probability=sim.get("plant_probability", 0.5),
                plant_confidence=sim.get("plant_confidence", 0.9)),
            split_ratios=tuple(obj.get("split_ratios", DEFAULT_SPLIT_RATIOS)),
            backgrounds=tuple(obj.get("backgrounds", ())),
        )


def sample_pairs(taxonomy: Taxonomy, backgrounds: list[str], count: int,
                 seed: int) -> list[tuple[str, str]]:
    """Seeded uniform draw of (background, object_class) pairs.

    Draws without replacement until the valid-pair pool is exhausted, then
    reshuffles and continues, so pair frequencies stay balanced.
    """
    pool = sorted(
        (bg, obj)
        for obj, allowed in taxonomy.pairs.items()
        for bg in allowed if bg in backgrounds)
    if not pool:
        raise TaxonomyError("no valid (background, object) pairs to sample")
    rng = np.random.default_rng(seed)
    out: list[tuple[str, str]] = []
    while len(out) < count:
        batch = list(pool)
        rng.shuffle(batch)
        out.extend(batch)
    return out[:count]


def _split_targets(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # floor each share, then hand out the remainder by largest fractional part
    floors = [math.floor(n * r) for r in ratios]
    fracs = [n * r - f for r, f in zip(ratios, floors)]
    remainder = n - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (-fracs[i], i))
    for i in order[:remainder]:
        floors[i] += 1
    return floors


def assign_splits(records: list[DatasetRecord],
                  ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
                  seed: int = 0) -> list[DatasetRecord]:
    """Tag records with train/val/test splits, grouped by scene.

    Scene groups are shuffled (seeded) and sliced contiguously against
    record-count targets, so every record of a scene lands in one split and
    no background leaks across splits. Returned records keep input order.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if not records:
        return []
    groups: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        groups.setdefault(rec.scene_id, []).append(idx)
    scene_ids = list(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(scene_ids)

    targets = _split_targets(len(records), ratios)
    boundaries = (targets[0], targets[0] + targets[1])
    split_of: dict[str, str] = {}
    assigned = 0
    for scene_id in scene_ids:
        if assigned < boundaries[0]:
            split_of[scene_id] = "train"
        elif assigned < boundaries[1]:
            split_of[scene_id] = "val"
        else:
            split_of[scene_id] = "test"
        assigned += len(groups[scene_id])
    return [replace(rec, split=split_of[rec.scene_id]) for rec in records]


def synthesize_scene(cfg: RunConfig, scene_index: int, background_class: str,
                     object_class: str, seed: int) -> SyntheticScene:
    """Deterministically draw one synthetic scene for a sampled pair."""
    side = float(cfg.proposal.image_side)
    sim = cfg.sim
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed & 0xFFFFFFFF, scene_index, 0x5CE2E]))
    w = side * rng.uniform(*sim.region_frac)
    h = side * rng.uniform(*sim.region_frac)
    x = rng.uniform(0.0, side - w)
    y = rng.uniform(0.0, side - h)
    region = BBox(x, y, w, h)
    peak = rng.uniform(*sim.peak_reward)
    planted: tuple[PlantedObject, ...] = ()
    if rng.random() < sim.plant_probability:
        size = math.sqrt(sim.nominal_area)
        px = rng.uniform(region.x, region.x2 - size)
        py = rng.uniform(region.y, region.y2 - size)
        planted = (PlantedObject(object_class, BBox(px, py, size, size),
                                 sim.plant_confidence),)
    return SyntheticScene(
        scene_id=f"scene-{scene_index:06d}",
        side=side,
        supports=(SupportRegion(object_class, region, peak),),
        detector_noise=sim.detector_noise,
        rng_seed=seed,
        nominal_area=sim.nominal_area,
        background_objects=planted)


def synthesize_scenes(cfg: RunConfig, seed: int) -> list[tuple[SyntheticScene, str, str]]:
    """All (scene, background_class, object_class) triples for a sim run."""
    backgrounds = list(cfg.backgrounds) or cfg.taxonomy.background_classes()
    pairs = sample_pairs(cfg.taxonomy, backgrounds, cfg.scene_count, seed)
    return [(synthesize_scene(cfg, i, bg, obj, seed), bg, obj)
            for i, (bg, obj) in enumerate(pairs)]


def run_scene(scene_ref: str, background_class: str, object_class: str,
              cfg: RunConfig, backend, proposals: list[BBox] | None = None) -> DatasetRecord:
    """Execute the full per-box loop for one scene.

    Boxes rejected by the early-stop filter or refused by the inpainter
    become negatives; verified boxes that merely re-detect a pre-existing
    same-class object are suppressed back to negatives.
    """
    if not cfg.taxonomy.permits(object_class, background_class):
        raise TaxonomyError(
            f"taxonomy forbids {object_class!r} in {background_class!r}")
    if proposals is None:
        proposals = generate_proposals(cfg.proposal)
    background_dets = backend.detect(scene_ref, scene_ref, object_class)
    es = cfg.early_stop

    entries: list[RecordEntry] = []
    for index, box in enumerate(proposals):
        if es.enabled:
            deltas = backend.divergence(scene_ref, box, object_class,
                                        es.step + 1, index)
            if deltas[es.step] < es.threshold:
                entries.append(RecordEntry(proposal=box))
                continue
        status, image_ref = backend.inpaint(scene_ref, box, object_class, index)
        if status != "OK":
            entries.append(RecordEntry(proposal=box))
            continue
        detections = backend.detect(scene_ref, image_ref, object_class)
        placement = select_verified(list(detections), box, object_class,
                                    cfg.tau, index)
        placement = suppress_preexisting(placement, list(background_dets))
        if not placement.present:
            entries.append(RecordEntry(proposal=box))
            continue
        reward = backend.rank(scene_ref, image_ref, object_class)
        entries.append(RecordEntry(proposal=box, verified=placement.verified_box,
                                   confidence=placement.confidence,
                                   reward=reward))
    return DatasetRecord(scene_ref, background_class, object_class,
                         float(cfg.proposal.image_side), tuple(entries))


@dataclass
class RunResult:
    records: list[DatasetRecord]
    failures: list[dict]
    attempted: int

    @property
    def positive_scene_count(self) -> int:
        return sum(1 for r in self.records if r.positives())


def run_dataset(cfg: RunConfig, backend_factory, seed: int,
                workers: int = 1) -> RunResult:
    """Run every synthesized scene through the pipeline and assign splits.

    backend_factory() is called once per pool slot; scene results merge in
    canonical scene order so output does not depend on worker count. Scenes
    whose backend gave up are excluded from the dataset and reported in the
    failure list instead.
    """
    jobs = synthesize_scenes(cfg, seed)
    proposals = generate_proposals(cfg.proposal)
    backends = [backend_factory() for _ in range(max(1, workers))]

    def process(slot_and_job):
        slot, (scene, bg, obj) = slot_and_job
        backend = backends[slot % len(backends)]
        register = getattr(backend, "register_scene", None)
        if register is not None:
            register(scene)
        try:
            return run_scene(scene.scene_id, bg, obj, cfg, backend, proposals)
        except WorkerFailure as exc:
            log.warning("scene %s failed: %s", scene.scene_id, exc)
            return {"scene_id": scene.scene_id, "error": str(exc)}

    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(process, enumerate(jobs)))
    finally:
        for backend in backends:
            backend.close()

    records = [r for r in results if isinstance(r, DatasetRecord)]
    failures = [r for r in results if isinstance(r, dict)]
    records = assign_splits(records, cfg.split_ratios, seed)
    result = RunResult(records=records, failures=failures, attempted=len(jobs))
    log.info("attempted=%d recorded=%d positive=%d failed=%d",
             result.attempted, len(records), result.positive_scene_count,
             len(failures))
    return result


def write_dataset(records: list[DatasetRecord], fp) -> None:
    for rec in records:
        fp.write(json.dumps(rec.to_json()) + "\n")


def read_dataset(fp) -> list[DatasetRecord]:
    out = []
    for line in fp:
        line = line.strip()
        if line:
            out.append(DatasetRecord.from_json(json.loads(line)))
    return out
