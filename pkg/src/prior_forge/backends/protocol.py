"""Newline-delimited JSON protocol to external worker processes.

Framing is bit-exact: UTF-8 JSON objects, one per line, LF-terminated.
Every request carries a monotonically increasing integer "id" which the
worker echoes in its response; responses arriving for stale ids (e.g.
after a timed-out retry) are discarded. Images pass by file-path
reference only; the engine never decodes pixels from workers.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass, field

from ..geometry import BBox
from ..verify import Detection

log = logging.getLogger("prior_forge.worker")

OK = "OK"
REFUSED = "REFUSED"
ERROR = "ERROR"

OPS = ("inpaint", "detect", "rank", "divergence")


class ProtocolError(RuntimeError):
    """Worker replied with something that is not a valid response."""


@dataclass(frozen=True)
class WorkerRequest:
    op: str
    scene_ref: str
    class_label: str
    box: BBox | None = None           # inpaint / divergence
    image_ref: str | None = None      # detect / rank
    steps: int | None = None          # divergence
    proposal_index: int | None = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown op {self.op!r}")

    def to_json(self, request_id: int) -> dict:
        obj: dict = {"id": request_id, "op": self.op,
                     "scene_ref": self.scene_ref, "class": self.class_label}
        if self.box is not None:
            obj["box"] = self.box.to_json()
        if self.image_ref is not None:
            obj["image_ref"] = self.image_ref
        if self.steps is not None:
            obj["steps"] = self.steps
        if self.proposal_index is not None:
            obj["proposal"] = self.proposal_index
        return obj


@dataclass(frozen=True)
class WorkerResponse:
    status: str
    image_ref: str | None = None
    detections: tuple[Detection, ...] = field(default_factory=tuple)
    reward: float | None = None
    deltas: tuple[float, ...] = field(default_factory=tuple)
    error: str | None = None

    def to_json(self, request_id: int) -> dict:
        obj: dict = {"id": request_id, "status": self.status}
        if self.image_ref is not None:
            obj["image_ref"] = self.image_ref
        if self.detections:
            obj["detections"] = [{"box": d.box.to_json(), "confidence": d.confidence,
                                  "class": d.class_label} for d in self.detections]
        if self.reward is not None:
            obj["reward"] = self.reward
        if self.deltas:
            obj["deltas"] = list(self.deltas)
        if self.error is not None:
            obj["error"] = self.error
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "WorkerResponse":
        status = obj.get("status")
        if status not in (OK, REFUSED, ERROR):
            raise ProtocolError(f"bad status in reply: {obj!r}")
        detections = tuple(
            Detection(BBox.from_json(d["box"]), float(d["confidence"]), d["class"])
            for d in obj.get("detections", []))
        reward = obj.get("reward")
        return cls(status=status, image_ref=obj.get("image_ref"),
                   detections=detections,
                   reward=None if reward is None else float(reward),
                   deltas=tuple(float(x) for x in obj.get("deltas", [])),
                   error=obj.get("error"))


class WorkerClient:
    """One worker subprocess; requests on it are strictly serialized."""

    def __init__(self, argv: list[str], timeout: float = 30.0, retries: int = 2):
        self.timeout = timeout
        self.retries = retries
        self._next_id = 0
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1)
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _await_reply(self, request_id: int) -> WorkerResponse | None:
        """Wait for the reply matching request_id; None means timeout/EOF."""
        while True:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                return None
            if line is None:
                return None
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                log.error("malformed worker reply: %r", line)
                raise ProtocolError(f"unparseable reply: {line!r}") from exc
            if not isinstance(obj, dict) or "id" not in obj:
                log.error("malformed worker reply: %r", line)
                raise ProtocolError(f"reply without id: {line!r}")
            if obj["id"] != request_id:
                continue  # stale reply from a timed-out attempt
            return WorkerResponse.from_json(obj)

    def call(self, request: WorkerRequest) -> WorkerResponse:
        """Send one request; retry on timeout, then give up with ERROR."""
        with self._lock:
            for attempt in range(self.retries + 1):
                if self._proc.poll() is not None and attempt > 0:
                    break  # dead worker; retrying is pointless
                self._next_id += 1
                request_id = self._next_id
                try:
                    assert self._proc.stdin is not None
                    self._proc.stdin.write(
                        json.dumps(request.to_json(request_id)) + "\n")
                    self._proc.stdin.flush()
                except (BrokenPipeError, OSError):
                    break
                reply = self._await_reply(request_id)
                if reply is not None:
                    return reply
                log.warning("worker timeout on id=%d (attempt %d)",
                            request_id, attempt + 1)
            return WorkerResponse(status=ERROR, error="worker unavailable")

    def close(self):
        if self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
