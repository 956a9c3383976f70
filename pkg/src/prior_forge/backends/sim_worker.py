"""Runnable NDJSON worker that serves the synthetic simulator over stdio.

Usage: python -m prior_forge.backends.sim_worker --scenes scenes.json

Reads one JSON request per line on stdin and writes one JSON response per
line on stdout, echoing the request id. Exists so the subprocess protocol
path can be exercised end-to-end without any real inpainting stack.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..geometry import BBox
from .protocol import WorkerRequest
from .sim import SimBackend, SyntheticScene


def request_from_wire(obj: dict) -> WorkerRequest:
    box = obj.get("box")
    return WorkerRequest(
        op=obj["op"],
        scene_ref=obj["scene_ref"],
        class_label=obj["class"],
        box=None if box is None else BBox.from_json(box),
        image_ref=obj.get("image_ref"),
        steps=obj.get("steps"),
        proposal_index=obj.get("proposal"),
    )


def serve(backend: SimBackend, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            request = request_from_wire(obj)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            stdout.write(json.dumps({"id": None, "status": "ERROR",
                                     "error": f"bad request: {exc}"}) + "\n")
            stdout.flush()
            continue
        response = backend.handle(request)
        stdout.write(json.dumps(response.to_json(obj["id"])) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", required=True,
                        help="JSON file with a list of synthetic scenes")
    args = parser.parse_args(argv)
    with open(args.scenes, encoding="utf-8") as fp:
        scenes = [SyntheticScene.from_json(o) for o in json.load(fp)]
    serve(SimBackend({s.scene_id: s for s in scenes}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
