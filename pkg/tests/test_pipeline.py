import json
import math
import sys
from collections import Counter

import pytest

from prior_forge.backends import SimBackend, WorkerBackend, WorkerClient
from prior_forge.backends.sim import (OK, SupportRegion, SyntheticScene,
                                      sim_inpaint)
from prior_forge.geometry import BBox, ProposalConfig, generate_proposals, iou
from prior_forge.pipeline import (DatasetRecord, EarlyStopConfig, RecordEntry,
                                  RunConfig, SimSceneConfig, Taxonomy,
                                  TaxonomyError, assign_splits, read_dataset,
                                  run_dataset, run_scene, sample_pairs,
                                  synthesize_scenes, write_dataset)

TAXONOMY = Taxonomy({"cat": ("living room",), "dog": ("park", "yard")})


def small_config(**overrides):
    base = dict(
        proposal=ProposalConfig(image_side=256, target_count=75,
                                scale_min=16, scale_max=28, num_scales=3),
        taxonomy=TAXONOMY,
        scene_count=6,
        sim=SimSceneConfig(plant_probability=0.0),
    )
    base.update(overrides)
    return RunConfig(**base)


def scene_with_region(region=BBox(64, 64, 128, 128), **overrides):
    defaults = dict(scene_id="scene-x", side=256.0,
                    supports=(SupportRegion("cat", region, 0.9),),
                    detector_noise=1.5, rng_seed=5, nominal_area=400.0)
    defaults.update(overrides)
    return SyntheticScene(**defaults)


class CountingBackend:
    """Wraps a backend and counts calls per op."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = Counter()

    def __getattr__(self, name):
        if name in ("inpaint", "detect", "rank", "divergence"):
            def wrapper(*args, **kwargs):
                self.calls[name] += 1
                return getattr(self.inner, name)(*args, **kwargs)
            return wrapper
        return getattr(self.inner, name)


class TestRunScene:
    def test_positives_center_fall_in_support_region(self):
        cfg = small_config()
        scene = scene_with_region()
        backend = SimBackend({scene.scene_id: scene})
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        region = scene.supports[0].region
        positives = record.positives()
        assert positives
        for entry in positives:
            cx, cy = entry.proposal.center
            assert region.x <= cx < region.x2
            assert region.y <= cy < region.y2
            assert entry.confidence >= cfg.tau
            assert entry.reward is not None

    def test_entries_cover_every_canonical_proposal(self):
        cfg = small_config()
        scene = scene_with_region()
        backend = SimBackend({scene.scene_id: scene})
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        proposals = generate_proposals(cfg.proposal)
        assert len(record.entries) == len(proposals)
        assert [e.proposal for e in record.entries] == proposals

    def test_positive_count_matches_brute_force_sim_rule(self):
        cfg = small_config()
        scene = scene_with_region()
        backend = SimBackend({scene.scene_id: scene})
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        expected = sum(
            1 for i, box in enumerate(generate_proposals(cfg.proposal))
            if sim_inpaint(scene, box, "cat", i)[0] == OK)
        assert len(record.positives()) == expected

    def test_empty_support_yields_zero_positives(self):
        cfg = small_config()
        scene = scene_with_region(supports=(
            SupportRegion("dog", BBox(64, 64, 128, 128), 0.9),))
        backend = SimBackend({scene.scene_id: scene})
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        assert record.positives() == []

    def test_early_stop_infinite_threshold_skips_all_inpainting(self):
        cfg = small_config(early_stop=EarlyStopConfig(
            enabled=True, threshold=math.inf, step=1))
        scene = scene_with_region()
        backend = CountingBackend(SimBackend({scene.scene_id: scene}))
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        assert backend.calls["inpaint"] == 0
        assert backend.calls["divergence"] == len(record.entries)
        assert record.positives() == []

    def test_early_stop_zero_threshold_changes_nothing(self):
        cfg = small_config()
        cfg_es = small_config(early_stop=EarlyStopConfig(
            enabled=True, threshold=0.0, step=0))
        scene = scene_with_region()
        backend = SimBackend({scene.scene_id: scene})
        plain = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        filtered = run_scene(scene.scene_id, "living room", "cat", cfg_es, backend)
        assert plain.entries == filtered.entries

    def test_suppression_removes_planted_overlaps(self):
        planted_box = BBox(118, 118, 20, 20)
        from prior_forge.backends.sim import PlantedObject
        scene = scene_with_region(background_objects=(
            PlantedObject("cat", planted_box, 0.9),))
        cfg = small_config()
        backend = SimBackend({scene.scene_id: scene})
        record = run_scene(scene.scene_id, "living room", "cat", cfg, backend)
        for entry in record.positives():
            assert iou(entry.verified, planted_box) < 0.5

    def test_taxonomy_violation_raises(self):
        cfg = small_config()
        scene = scene_with_region()
        backend = SimBackend({scene.scene_id: scene})
        with pytest.raises(TaxonomyError):
            run_scene(scene.scene_id, "park", "cat", cfg, backend)


class TestSamplePairs:
    def test_single_pair_repeats(self):
        taxonomy = Taxonomy({"cat": ("living room",)})
        pairs = sample_pairs(taxonomy, ["living room"], 3, seed=0)
        assert pairs == [("living room", "cat")] * 3

    def test_seed_determinism(self):
        backgrounds = TAXONOMY.background_classes()
        assert sample_pairs(TAXONOMY, backgrounds, 50, seed=9) == \
            sample_pairs(TAXONOMY, backgrounds, 50, seed=9)

    def test_two_pairs_balanced(self):
        taxonomy = Taxonomy({"cat": ("living room",), "dog": ("park",)})
        pairs = sample_pairs(taxonomy, ["living room", "park"], 1000, seed=1)
        counts = Counter(pairs)
        for count in counts.values():
            assert abs(count - 500) <= 25  # within 5% of 500

    def test_no_valid_pairs(self):
        with pytest.raises(TaxonomyError):
            sample_pairs(TAXONOMY, ["moon base"], 5, seed=0)


class TestAssignSplits:
    def single(self, n):
        return [DatasetRecord(f"scene-{i}", "bg", "cat", 100.0,
                              (RecordEntry(proposal=BBox(0, 0, 1, 1)),))
                for i in range(n)]

    def counts(self, records):
        return Counter(r.split for r in records)

    def test_hundred_singletons_split_exactly(self):
        counts = self.counts(assign_splits(self.single(100), seed=3))
        assert counts == {"train": 85, "val": 10, "test": 5}

    def test_twenty_records_floor_then_remainder(self):
        counts = self.counts(assign_splits(self.single(20), seed=3))
        assert counts == {"train": 17, "val": 2, "test": 1}

    def test_single_record_goes_to_train(self):
        assert assign_splits(self.single(1))[0].split == "train"

    def test_scene_grouping_keeps_records_together(self):
        records = []
        for i in range(30):
            for _ in range(3):  # three records per scene
                records.append(DatasetRecord(
                    f"scene-{i}", "bg", "cat", 100.0,
                    (RecordEntry(proposal=BBox(0, 0, 1, 1)),)))
        tagged = assign_splits(records, seed=11)
        by_scene = {}
        for rec in tagged:
            by_scene.setdefault(rec.scene_id, set()).add(rec.split)
        assert all(len(splits) == 1 for splits in by_scene.values())
        counts = self.counts(tagged)
        assert counts["train"] + counts["val"] + counts["test"] == 90

    def test_input_order_preserved(self):
        records = self.single(10)
        tagged = assign_splits(records, seed=0)
        assert [r.scene_id for r in tagged] == [r.scene_id for r in records]

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            assign_splits(self.single(10), ratios=(0.5, 0.2, 0.2))


class TestRunDataset:
    def test_worker_count_invariance(self):
        cfg = small_config(sim=SimSceneConfig(plant_probability=0.5))
        one = run_dataset(cfg, lambda: SimBackend({}), seed=7, workers=1)
        many = run_dataset(cfg, lambda: SimBackend({}), seed=7, workers=4)
        as_lines = lambda result: [json.dumps(r.to_json())
                                   for r in result.records]
        assert as_lines(one) == as_lines(many)

    def test_failed_scenes_are_excluded_and_reported(self):
        cfg = small_config(scene_count=3)

        class FlakyBackend(SimBackend):
            def detect(self, scene_ref, image_ref, class_label):
                if scene_ref == "scene-000001":
                    from prior_forge.backends import WorkerFailure
                    raise WorkerFailure("boom")
                return super().detect(scene_ref, image_ref, class_label)

        result = run_dataset(cfg, lambda: FlakyBackend({}), seed=7, workers=2)
        assert result.attempted == 3
        assert len(result.records) == 2
        assert [f["scene_id"] for f in result.failures] == ["scene-000001"]

    def test_dataset_io_round_trip(self, tmp_path):
        cfg = small_config(scene_count=4)
        result = run_dataset(cfg, lambda: SimBackend({}), seed=2, workers=2)
        path = tmp_path / "ds.jsonl"
        with open(path, "w") as fp:
            write_dataset(result.records, fp)
        with open(path) as fp:
            loaded = read_dataset(fp)
        assert loaded == result.records

    def test_worker_protocol_path_matches_in_process(self, tmp_path):
        cfg = small_config(scene_count=3)
        scenes_path = tmp_path / "scenes.json"
        scenes_path.write_text(json.dumps(
            [scene.to_json() for scene, _, _ in synthesize_scenes(cfg, seed=4)]))

        def worker_factory():
            return WorkerBackend(WorkerClient(
                [sys.executable, "-m", "prior_forge.backends.sim_worker",
                 "--scenes", str(scenes_path)], timeout=30.0))

        local = run_dataset(cfg, lambda: SimBackend({}), seed=4, workers=1)
        remote = run_dataset(cfg, worker_factory, seed=4, workers=2)
        assert [r.to_json() for r in local.records] == \
            [r.to_json() for r in remote.records]
