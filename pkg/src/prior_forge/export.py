"""Trainer-facing dataset export.

Emits one JSONL file the distillation trainer consumes directly: a
manifest line (class vocabulary, raster size, supervision depth) followed
by one instance per positively annotated record. Each instance carries a
base64 grayscale raster of the scene, the top-k supervision boxes in
normalized coordinates, and their min-max normalized rewards.
"""

from __future__ import annotations

import base64
import json

from .backends.sim import render_scene
from .matchloss import DEFAULT_TOP_K, select_supervision
from .pipeline import DatasetRecord, RunConfig, synthesize_scenes


def export_trainset(records: list[DatasetRecord], cfg: RunConfig, seed: int,
                    fp, image_size: int = 64, top_k: int = DEFAULT_TOP_K) -> int:
    """Write the trainer export; returns the number of instances emitted.

    Scene rasters are re-synthesized deterministically from (cfg, seed),
    so the export needs the same config and seed the run used.
    """
    scenes = {scene.scene_id: scene
              for scene, _, _ in synthesize_scenes(cfg, seed)}
    classes = cfg.taxonomy.object_classes()
    class_index = {c: i for i, c in enumerate(classes)}
    manifest = {"type": "manifest", "classes": classes,
                "image_size": image_size, "top_k": top_k,
                "coordinate_format": "xywh_normalized"}
    fp.write(json.dumps(manifest) + "\n")

    emitted = 0
    for rec in records:
        if not rec.positives():
            continue
        scene = scenes.get(rec.scene_id)
        if scene is None:
            raise KeyError(f"record {rec.scene_id!r} has no synthesized scene; "
                           "config/seed must match the original run")
        raster = render_scene(scene, image_size)
        sup = select_supervision(rec.to_prior(), rec.image_side, top_k)
        instance = {
            "type": "instance",
            "scene_id": rec.scene_id,
            "object_class": rec.object_class,
            "class_index": class_index[rec.object_class],
            "split": rec.split,
            "image_side": rec.image_side,
            "image_b64": base64.b64encode(raster.tobytes()).decode("ascii"),
            "supervision": {"boxes": [b.to_json() for b in sup.boxes],
                            "rewards": list(sup.rewards)},
        }
        fp.write(json.dumps(instance) + "\n")
        emitted += 1
    return emitted
