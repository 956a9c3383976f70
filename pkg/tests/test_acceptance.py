"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them on success)."""

import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager
from itertools import permutations

import numpy as np
import pytest

from prior_forge.backends import SimBackend
from prior_forge.backends.sim import sample_divergence
from prior_forge.earlystop import DivergenceTrace, calibrate
from prior_forge.geometry import BBox, ProposalConfig, generate_proposals, iou
from prior_forge.matchloss import (PredictionSet, SupervisionSet, bbox_loss,
                                   hungarian_match, match_cost, total_loss)
from prior_forge.metrics import EvalInstance, iou50_at_k, iou_at_k, mean_ap
from prior_forge.pipeline import (DatasetRecord, RecordEntry, RunConfig,
                                  SimSceneConfig, Taxonomy, assign_splits,
                                  run_dataset, synthesize_scenes)
from prior_forge.prior import accumulate_density

from test_matchloss import oracle_total_loss, random_case


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] FAIL  {name}")
        raise
    print(f"[ACCEPTANCE] PASS  {name}")


def test_proposal_count():
    with criterion("proposal count: 1,004 boxes from 144 anchors, max 2,160"):
        cfg = ProposalConfig(image_side=512, target_count=435,
                             scale_min=64, scale_max=256, num_scales=5)
        generate_proposals(cfg)  # warm-up
        elapsed = math.inf
        for _ in range(5):  # best-of-5 to shrug off scheduler noise
            start = time.perf_counter()
            proposals = generate_proposals(cfg)
            elapsed = min(elapsed, time.perf_counter() - start)
        assert len(proposals) == 1004
        assert cfg.grid_size ** 2 == 144
        assert cfg.grid_size ** 2 * cfg.num_scales * len(cfg.aspect_ratios) == 2160
        assert elapsed < 1e-3, f"took {elapsed * 1e3:.2f} ms"


def test_hungarian_oracle():
    with criterion("hungarian: 1,000 random matrices up to 7x7 match "
                   "brute force exactly, < 5 s"):
        rng = np.random.default_rng(2024)
        perm_cache = {}
        start = time.perf_counter()
        for _ in range(1000):
            n_pred = int(rng.integers(1, 8))
            n_sup = int(rng.integers(1, 8))
            preds, sup, (pb, _, sb, _) = random_case(rng, n_pred, n_sup)
            assignment = hungarian_match(preds, sup)
            cost = np.array([[match_cost(BBox(*p), BBox(*g)) for g in sb]
                             for p in pb])
            if n_sup <= n_pred:
                key = (n_pred, n_sup)
                if key not in perm_cache:
                    perm_cache[key] = np.array(
                        list(permutations(range(n_pred), n_sup)))
                perms = perm_cache[key]
                totals = cost[perms, np.arange(n_sup)].sum(axis=1)
                best = perms[int(totals.argmin())]
                expected = math.fsum(cost[best[j], j] for j in range(n_sup))
            else:
                key = (n_sup, n_pred)
                if key not in perm_cache:
                    perm_cache[key] = np.array(
                        list(permutations(range(n_sup), n_pred)))
                perms = perm_cache[key]
                totals = cost[np.arange(n_pred), perms].sum(axis=1)
                best = perms[int(totals.argmin())]
                expected = math.fsum(cost[i, best[i]] for i in range(n_pred))
            assert assignment.total_cost == expected
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"took {elapsed:.2f} s"


def test_loss_formula():
    with criterion("loss: 100 random instances within 1e-9 of arithmetic "
                   "oracle; omega endpoints exact"):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n_pred = int(rng.integers(1, 9))
            n_sup = int(rng.integers(1, 7))
            preds, sup, raw = random_case(rng, n_pred, n_sup)
            ours = total_loss(preds, sup)
            expected = oracle_total_loss(*raw)
            assert ours == pytest.approx(expected, rel=1e-9)

        pred = PredictionSet((BBox(0.4, 0.4, 0.2, 0.2),), (0.0,))
        gt = BBox(0.1, 0.1, 0.2, 0.2)
        pair_cost = match_cost(pred.boxes[0], gt)
        low = SupervisionSet((gt,), (0.0,))
        high = SupervisionSet((gt,), (1.0,))
        assert bbox_loss(hungarian_match(pred, low), pred, low) \
            == 0.5 * pair_cost
        assert bbox_loss(hungarian_match(pred, high), pred, high) \
            == 1.0 * pair_cost


def test_early_stop_reproduction():
    with criterion("early stop: 10,000 separated success/failure traces -> "
                   "s in [0.2, 0.4], speedup >= 2.0x, < 2 s"):
        rng = np.random.default_rng(7)
        n, steps = 10_000, 5
        traces = []
        for i in range(n):
            success = bool(rng.random() < 0.30)
            deltas = sample_divergence(success, steps, rng)
            traces.append(DivergenceTrace(
                i, deltas, "success" if success else "failure"))
        start = time.perf_counter()
        result = calibrate(traces, step_costs=[1, 2, 3, 4, 5],
                           tau_full=20.0, target_recall=0.81)
        elapsed = time.perf_counter() - start
        assert result.recall >= 0.81
        assert 0.2 <= result.pass_fraction <= 0.4, result.pass_fraction
        assert result.speedup >= 2.0, result.speedup
        assert elapsed < 2.0, f"took {elapsed:.2f} s"


def test_end_to_end_simulator_oracle():
    with criterion("end to end: >= 90% heatmap mass inside the support "
                   "region, zero positives on planted objects, < 30 s"):
        taxonomy = Taxonomy({"cat": ("living room",), "dog": ("park",),
                             "pizza": ("dining room",)})
        cfg = RunConfig(
            proposal=ProposalConfig(image_side=256, target_count=300,
                                    scale_min=8, scale_max=12, num_scales=3),
            taxonomy=taxonomy, scene_count=20,
            sim=SimSceneConfig(region_frac=(0.60, 0.75),
                               peak_reward=(1.5, 2.5), nominal_area=100.0,
                               detector_noise=0.75, plant_probability=0.5))
        start = time.perf_counter()
        result = run_dataset(cfg, lambda: SimBackend({}), seed=7, workers=4)
        scenes = {s.scene_id: s for s, _, _ in synthesize_scenes(cfg, seed=7)}
        assert len(result.records) == 20

        planted_seen = 0
        for rec in result.records:
            scene = scenes[rec.scene_id]
            side = int(rec.image_side)
            density = accumulate_density(rec.to_prior(), side, side)
            total = density.sum()
            assert total > 0, f"{rec.scene_id} extracted an empty prior"
            region = scene.supports[0].region
            ys, xs = np.mgrid[0:side, 0:side]
            inside = ((xs + 0.5 >= region.x) & (xs + 0.5 < region.x2)
                      & (ys + 0.5 >= region.y) & (ys + 0.5 < region.y2))
            frac = density[inside].sum() / total
            assert frac >= 0.90, f"{rec.scene_id}: {frac:.3f} mass inside"

            for planted in scene.background_objects:
                planted_seen += 1
                for entry in rec.positives():
                    assert iou(entry.verified, planted.box) < 0.5
        assert planted_seen > 0  # the suppression path was actually exercised
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"took {elapsed:.2f} s"


def test_metrics_sanity():
    with criterion("metrics: 5 hand instances exact; monotone in k over "
                   "1,000 random instances"):
        gt1, gt2 = BBox(0, 0, 10, 10), BBox(20, 20, 10, 10)
        far = BBox(50, 50, 10, 10)
        half = BBox(0, 0, 10, 5)  # IoU exactly 0.5 with gt1

        perfect = EvalInstance(((gt1, 0.9),), (gt1,))
        all_miss = EvalInstance(((far, 0.9),), (gt1,))
        three_two = EvalInstance(((gt1, 0.9), (far, 0.8), (gt2, 0.7)),
                                 (gt1, gt2))
        boundary = EvalInstance(((half, 0.9),), (gt1,))
        rank3 = EvalInstance(((far, 0.9), (far, 0.8), (gt1, 0.7)), (gt1,))

        assert mean_ap([perfect]) == 100.0
        assert iou50_at_k([perfect], 1) == 100.0
        assert mean_ap([all_miss]) == 0.0
        assert iou50_at_k([all_miss], 1) == 0.0
        # PR curve: precision [1, 1/2, 2/3] at recall [1/2, 1/2, 1]
        assert mean_ap([three_two]) == pytest.approx(
            100.0 * (0.5 * 1.0 + 0.5 * (2 / 3)), abs=1e-9)
        assert iou50_at_k([three_two], 1) == 100.0
        # hit only at the 0.50 threshold out of ten
        assert mean_ap([boundary]) == pytest.approx(100.0 * 0.1, abs=1e-9)
        assert iou50_at_k([boundary], 1) == 100.0
        assert iou50_at_k([rank3], 1) == 0.0
        assert iou50_at_k([rank3], 5) == 100.0
        assert iou_at_k(rank3, 5) > iou_at_k(rank3, 1)

        rng = np.random.default_rng(17)
        instances = []
        for _ in range(1000):
            preds = tuple(
                (BBox(*rng.uniform(0, 40, 2), *rng.uniform(4, 20, 2)),
                 float(rng.random())) for _ in range(5))
            gts = tuple(BBox(*rng.uniform(0, 40, 2), *rng.uniform(4, 20, 2))
                        for _ in range(int(rng.integers(1, 4))))
            instances.append(EvalInstance(preds, gts))
        for inst in instances:
            values = [iou_at_k(inst, k) for k in range(1, 6)]
            assert all(a <= b for a, b in zip(values, values[1:]))
        for k in range(1, 5):
            assert iou50_at_k(instances, k) <= iou50_at_k(instances, k + 1)


def test_split_proportions():
    with criterion("splits: 1,000 records -> 850/100/50 exactly, "
                   "scene-grouped"):
        records = [DatasetRecord(f"scene-{i}", "bg", "cat", 100.0,
                                 (RecordEntry(proposal=BBox(0, 0, 1, 1)),))
                   for i in range(1000)]
        tagged = assign_splits(records, seed=5)
        counts = {"train": 0, "val": 0, "test": 0}
        for rec in tagged:
            counts[rec.split] += 1
        assert counts == {"train": 850, "val": 100, "test": 50}
        by_scene = {}
        for rec in tagged:
            by_scene.setdefault(rec.scene_id, set()).add(rec.split)
        assert all(len(s) == 1 for s in by_scene.values())


def test_determinism_across_worker_counts(tmp_path):
    with criterion("determinism: run --backend sim --seed 7 is byte-identical "
                   "for 1 and 8 workers"):
        config = {
            "proposal": {"image_side": 256, "target_count": 75,
                         "scale_min": 16, "scale_max": 28, "num_scales": 3},
            "taxonomy": {"cat": ["living room"], "dog": ["park"]},
            "scene_count": 8,
            "sim": {"plant_probability": 0.5},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        outputs = []
        for workers in (1, 8):
            out = tmp_path / f"ds-{workers}.jsonl"
            proc = subprocess.run(
                [sys.executable, "-m", "prior_forge.cli", "run",
                 "--backend", "sim", "--config", str(config_path),
                 "--out", str(out), "--seed", "7",
                 "--workers", str(workers)],
                capture_output=True, text=True, timeout=120)
            assert proc.returncode == 0, proc.stderr
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        assert len(outputs[0]) > 0
