"""Backends: the worker wire protocol and the synthetic-scene simulator."""

from __future__ import annotations

from ..geometry import BBox
from ..verify import Detection
from .protocol import (ERROR, OK, REFUSED, ProtocolError, WorkerClient,
                       WorkerRequest, WorkerResponse)
from .sim import (PlantedObject, SimBackend, SupportRegion, SyntheticScene,
                  render_scene, sample_divergence, sim_detect, sim_divergence,
                  sim_inpaint, sim_rank)


class WorkerFailure(RuntimeError):
    """A worker gave up on a request; the owning scene should be abandoned."""


class WorkerBackend:
    """Adapter from the pipeline's backend surface to one worker process."""

    def __init__(self, client: WorkerClient):
        self.client = client

    def _call(self, request: WorkerRequest) -> WorkerResponse:
        response = self.client.call(request)
        if response.status == ERROR:
            raise WorkerFailure(response.error or "worker error")
        return response

    def inpaint(self, scene_ref: str, box: BBox, class_label: str,
                proposal_index: int = 0) -> tuple[str, str | None]:
        response = self._call(WorkerRequest(
            op="inpaint", scene_ref=scene_ref, class_label=class_label,
            box=box, proposal_index=proposal_index))
        return response.status, response.image_ref

    def detect(self, scene_ref: str, image_ref: str,
               class_label: str) -> tuple[Detection, ...]:
        response = self._call(WorkerRequest(
            op="detect", scene_ref=scene_ref, class_label=class_label,
            image_ref=image_ref))
        return response.detections

    def rank(self, scene_ref: str, image_ref: str, class_label: str) -> float:
        response = self._call(WorkerRequest(
            op="rank", scene_ref=scene_ref, class_label=class_label,
            image_ref=image_ref))
        return response.reward if response.reward is not None else 0.0

    def divergence(self, scene_ref: str, box: BBox, class_label: str,
                   steps: int, proposal_index: int = 0) -> tuple[float, ...]:
        response = self._call(WorkerRequest(
            op="divergence", scene_ref=scene_ref, class_label=class_label,
            box=box, steps=steps, proposal_index=proposal_index))
        return response.deltas

    def close(self):
        self.client.close()
