/** Reader for the engine's trainer-facing JSONL export. */

import { readFileSync } from "node:fs";
import { Buffer } from "node:buffer";
import { Box } from "./boxes.js";

export interface Manifest {
  classes: string[];
  imageSize: number;
  topK: number;
}

export interface Instance {
  sceneId: string;
  objectClass: string;
  classIndex: number;
  split: string | null;
  imageSide: number;
  /** grayscale raster, values in [0, 1], length imageSize * imageSize */
  pixels: Float32Array;
  supervision: { boxes: Box[]; rewards: number[] };
}

export interface Trainset {
  manifest: Manifest;
  instances: Instance[];
}

export function loadTrainset(path: string): Trainset {
  const lines = readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line));
  if (lines.length === 0 || lines[0].type !== "manifest") {
    throw new Error(`${path}: expected a manifest on the first line`);
  }
  const manifest: Manifest = {
    classes: lines[0].classes,
    imageSize: lines[0].image_size,
    topK: lines[0].top_k,
  };
  const instances: Instance[] = lines.slice(1).map((obj) => {
    if (obj.type !== "instance") {
      throw new Error(`unexpected line type ${obj.type}`);
    }
    const raw = Buffer.from(obj.image_b64, "base64");
    const expected = manifest.imageSize * manifest.imageSize;
    if (raw.length !== expected) {
      throw new Error(
        `${obj.scene_id}: raster has ${raw.length} bytes, expected ${expected}`,
      );
    }
    const pixels = new Float32Array(expected);
    for (let i = 0; i < expected; i++) pixels[i] = raw[i] / 255;
    return {
      sceneId: obj.scene_id,
      objectClass: obj.object_class,
      classIndex: obj.class_index,
      split: obj.split ?? null,
      imageSide: obj.image_side,
      pixels,
      supervision: {
        boxes: obj.supervision.boxes as Box[],
        rewards: obj.supervision.rewards as number[],
      },
    };
  });
  return { manifest, instances };
}
