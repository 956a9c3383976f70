import json
import math
import sys

import numpy as np
import pytest

from prior_forge.backends import (OK, REFUSED, ProtocolError, WorkerBackend,
                                  WorkerClient, WorkerFailure, WorkerRequest)
from prior_forge.backends.sim import (DELTA_SIGMA_SCHEDULE, PlantedObject,
                                      SimBackend, SupportRegion,
                                      SyntheticScene, render_scene,
                                      sim_detect, sim_divergence, sim_inpaint,
                                      sim_rank)
from prior_forge.geometry import BBox, iou


def make_scene(**overrides):
    defaults = dict(
        scene_id="scene-a",
        side=256.0,
        supports=(SupportRegion("cat", BBox(64, 64, 128, 128), 0.9),),
        detector_noise=2.0,
        rng_seed=7,
        nominal_area=400.0,
    )
    defaults.update(overrides)
    return SyntheticScene(**defaults)


NOMINAL_BOX = BBox(118, 118, 20, 20)  # centered in the region, nominal area


class TestSimInpaint:
    def test_centered_nominal_box_ok(self):
        status, ref = sim_inpaint(make_scene(), NOMINAL_BOX, "cat", 3)
        assert status == OK
        assert ref is not None

    def test_outside_region_refused(self):
        status, ref = sim_inpaint(make_scene(), BBox(4, 4, 20, 20), "cat")
        assert status == REFUSED and ref is None

    def test_unknown_class_refused(self):
        status, _ = sim_inpaint(make_scene(), NOMINAL_BOX, "zebra")
        assert status == REFUSED

    def test_oversize_box_refused(self):
        # 10x the nominal area, still inside the region
        side = math.sqrt(10 * 400)
        box = BBox(128 - side / 2, 128 - side / 2, side, side)
        status, _ = sim_inpaint(make_scene(), box, "cat")
        assert status == REFUSED

    def test_area_band_boundaries(self):
        quarter = BBox(123, 123, 10, 10)      # 0.25x nominal exactly
        assert sim_inpaint(make_scene(), quarter, "cat")[0] == OK
        quadruple = BBox(108, 108, 40, 40)    # 4x nominal exactly
        assert sim_inpaint(make_scene(), quadruple, "cat")[0] == OK
        too_small = BBox(123, 123, 9.9, 9.9)
        assert sim_inpaint(make_scene(), too_small, "cat")[0] == REFUSED


class TestSimDetect:
    def test_ok_insertion_detected_with_high_iou(self):
        scene = make_scene()
        status, ref = sim_inpaint(scene, NOMINAL_BOX, "cat", 5)
        dets = sim_detect(scene, ref, "cat")
        assert len(dets) == 1
        assert dets[0].class_label == "cat"
        # noise 2px on a 20px box stays well above IoU 0.5
        assert iou(dets[0].box, NOMINAL_BOX) >= 0.5
        assert 0.5 <= dets[0].confidence <= 1.0

    def test_refused_insertion_yields_nothing(self):
        scene = make_scene()
        _, ref = sim_inpaint(scene, NOMINAL_BOX, "cat", 5)
        bad_ref = ref.replace('"cat"', '"zebra"')
        assert sim_detect(scene, bad_ref, "zebra") == ()

    def test_background_returns_planted_objects(self):
        planted = PlantedObject("cat", BBox(80, 80, 20, 20), 0.85)
        scene = make_scene(background_objects=(planted,))
        dets = sim_detect(scene, scene.scene_id, "cat")
        assert len(dets) == 1
        assert dets[0].box == planted.box
        assert sim_detect(scene, scene.scene_id, "dog") == ()

    def test_confidence_decreases_with_center_distance(self):
        scene = make_scene()
        _, ref_center = sim_inpaint(scene, NOMINAL_BOX, "cat", 0)
        off = BBox(70, 70, 20, 20)
        _, ref_off = sim_inpaint(scene, off, "cat", 1)
        conf_center = sim_detect(scene, ref_center, "cat")[0].confidence
        conf_off = sim_detect(scene, ref_off, "cat")[0].confidence
        assert conf_center > conf_off

    @pytest.mark.parametrize("index", [0, 17, 903])
    def test_detect_iou_bound_under_small_noise(self, index):
        # noise <= 10% of box size keeps IoU >= 0.5 with the proposal
        scene = make_scene(detector_noise=2.0)
        box = BBox(108, 108, 40, 40)
        _, ref = sim_inpaint(scene, box, "cat", index)
        det = sim_detect(scene, ref, "cat")[0]
        assert iou(det.box, box) >= 0.5


class TestSimRank:
    def test_reward_peaks_at_region_center(self):
        scene = make_scene()
        _, ref = sim_inpaint(scene, NOMINAL_BOX, "cat", 0)
        reward = sim_rank(scene, ref, "cat")
        assert reward == pytest.approx(0.9, abs=1e-6)

    def test_reward_decreases_outward(self):
        scene = make_scene()
        _, ref_center = sim_inpaint(scene, NOMINAL_BOX, "cat", 0)
        _, ref_off = sim_inpaint(scene, BBox(70, 70, 20, 20), "cat", 1)
        assert sim_rank(scene, ref_center, "cat") > sim_rank(scene, ref_off, "cat")


class TestSimDivergence:
    def test_success_and_failure_means_separate(self):
        scene = make_scene()
        ok_deltas, bad_deltas = [], []
        for i in range(200):
            ok_deltas.extend(sim_divergence(scene, NOMINAL_BOX, "cat", 3, i))
            bad_deltas.extend(sim_divergence(scene, BBox(4, 4, 20, 20),
                                             "cat", 3, i))
        assert np.mean(ok_deltas) > 1.0
        assert np.mean(bad_deltas) < 0.8

    def test_requested_step_count(self):
        scene = make_scene()
        assert len(sim_divergence(scene, NOMINAL_BOX, "cat", 2, 0)) == 2
        long = sim_divergence(scene, NOMINAL_BOX, "cat",
                              len(DELTA_SIGMA_SCHEDULE) + 3, 0)
        assert len(long) == len(DELTA_SIGMA_SCHEDULE) + 3

    def test_deterministic_and_order_independent(self):
        scene = make_scene()
        first = sim_divergence(scene, NOMINAL_BOX, "cat", 4, 11)
        for other_index in (0, 12, 999):
            sim_divergence(scene, NOMINAL_BOX, "cat", 4, other_index)
        assert sim_divergence(scene, NOMINAL_BOX, "cat", 4, 11) == first

    def test_distinct_proposals_get_distinct_streams(self):
        scene = make_scene()
        a = sim_divergence(scene, NOMINAL_BOX, "cat", 4, 0)
        b = sim_divergence(scene, NOMINAL_BOX, "cat", 4, 1)
        assert a != b


class TestSceneSerialization:
    def test_round_trip(self):
        scene = make_scene(background_objects=(
            PlantedObject("cat", BBox(80, 80, 20, 20), 0.85),))
        assert SyntheticScene.from_json(scene.to_json()) == scene

    def test_region_containment_enforced(self):
        with pytest.raises(ValueError):
            make_scene(supports=(SupportRegion("cat", BBox(200, 200, 100, 100),
                                               0.9),))

    def test_render_is_deterministic(self):
        scene = make_scene()
        a = render_scene(scene, 32)
        b = render_scene(scene, 32)
        assert np.array_equal(a, b)
        assert a.shape == (32, 32) and a.dtype == np.uint8
        # region pixels shaded differently from the background
        assert a[16, 16] != a[0, 0]


def write_scenes_file(tmp_path, scenes):
    path = tmp_path / "scenes.json"
    path.write_text(json.dumps([s.to_json() for s in scenes]))
    return str(path)


class TestWorkerProtocol:
    def spawn(self, tmp_path, **kwargs):
        scenes = [make_scene(background_objects=(
            PlantedObject("cat", BBox(80, 80, 20, 20), 0.85),))]
        path = write_scenes_file(tmp_path, scenes)
        argv = [sys.executable, "-m", "prior_forge.backends.sim_worker",
                "--scenes", path]
        return WorkerClient(argv, **kwargs)

    def test_inpaint_happy_path(self, tmp_path):
        with self.spawn(tmp_path) as client:
            response = client.call(WorkerRequest(
                op="inpaint", scene_ref="scene-a", class_label="cat",
                box=NOMINAL_BOX, proposal_index=3))
            assert response.status == OK
            assert response.image_ref

    def test_detect_and_rank_round_trip(self, tmp_path):
        with self.spawn(tmp_path) as client:
            inpainted = client.call(WorkerRequest(
                op="inpaint", scene_ref="scene-a", class_label="cat",
                box=NOMINAL_BOX, proposal_index=3))
            dets = client.call(WorkerRequest(
                op="detect", scene_ref="scene-a", class_label="cat",
                image_ref=inpainted.image_ref))
            assert len(dets.detections) == 1
            ranked = client.call(WorkerRequest(
                op="rank", scene_ref="scene-a", class_label="cat",
                image_ref=inpainted.image_ref))
            assert ranked.reward == pytest.approx(0.9, abs=1e-6)

    def test_divergence_step_contract(self, tmp_path):
        with self.spawn(tmp_path) as client:
            response = client.call(WorkerRequest(
                op="divergence", scene_ref="scene-a", class_label="cat",
                box=NOMINAL_BOX, steps=2, proposal_index=0))
            assert response.status == OK
            assert len(response.deltas) == 2

    def test_matches_in_process_simulator(self, tmp_path):
        scene = make_scene()
        backend = SimBackend({scene.scene_id: scene})
        with self.spawn(tmp_path) as client:
            remote = WorkerBackend(client)
            local_status, local_ref = backend.inpaint(
                "scene-a", NOMINAL_BOX, "cat", 9)
            remote_status, remote_ref = remote.inpaint(
                "scene-a", NOMINAL_BOX, "cat", 9)
            assert (local_status, local_ref) == (remote_status, remote_ref)
            assert backend.detect("scene-a", local_ref, "cat") == \
                remote.detect("scene-a", remote_ref, "cat")
            assert backend.divergence("scene-a", NOMINAL_BOX, "cat", 3, 9) == \
                remote.divergence("scene-a", NOMINAL_BOX, "cat", 3, 9)

    def test_dead_worker_reports_error(self):
        client = WorkerClient([sys.executable, "-c", "pass"],
                              timeout=1.0, retries=1)
        try:
            response = client.call(WorkerRequest(
                op="inpaint", scene_ref="scene-a", class_label="cat",
                box=NOMINAL_BOX))
            assert response.status == "ERROR"
        finally:
            client.close()

    def test_unresponsive_worker_times_out(self):
        client = WorkerClient(
            [sys.executable, "-c", "import time; time.sleep(30)"],
            timeout=0.3, retries=1)
        try:
            response = client.call(WorkerRequest(
                op="inpaint", scene_ref="scene-a", class_label="cat",
                box=NOMINAL_BOX))
            assert response.status == "ERROR"
        finally:
            client.close()

    def test_malformed_reply_raises_protocol_error(self):
        program = "import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n"
        client = WorkerClient([sys.executable, "-c", program], timeout=2.0)
        try:
            with pytest.raises(ProtocolError):
                client.call(WorkerRequest(
                    op="inpaint", scene_ref="scene-a", class_label="cat",
                    box=NOMINAL_BOX))
        finally:
            client.close()

    def test_unknown_scene_becomes_worker_failure(self, tmp_path):
        with self.spawn(tmp_path) as client:
            backend = WorkerBackend(client)
            with pytest.raises(WorkerFailure):
                backend.inpaint("scene-missing", NOMINAL_BOX, "cat", 0)
