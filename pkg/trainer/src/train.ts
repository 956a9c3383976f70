/**
 * Training loop: Hungarian matching against top-k supervision, the
 * reward-weighted L1 + GIoU box loss plus plausibility regression,
 * AdamW-style updates (adam + decoupled weight decay) with gradient-norm
 * clipping, and patience-based early stopping. Predictions are ranked by
 * the sigmoid of the plausibility logit.
 */

import * as tf from "@tensorflow/tfjs";
import { writeFileSync } from "node:fs";
import { Box, GIOU_WEIGHT, L1_WEIGHT, iou } from "./boxes.js";
import { Instance } from "./data.js";
import {
  MatchPairs,
  PLAUSIBILITY_WEIGHT,
  matchPredictions,
  plausibilityTargets,
} from "./loss.js";
import { INPUT_CHANNELS, ModelConfig, PlacementModel } from "./model.js";

export interface TrainResult {
  epochs: number;
  finalLoss: number;
  bestLoss: number;
  history: number[];
}

export interface RankedPrediction {
  box: Box;
  score: number;
}

/** Stack rasters into [B, S, S, 3] with coordinate channels appended. */
export function buildImages(
  instances: Instance[],
  imageSize: number,
): tf.Tensor4D {
  const batch = instances.length;
  const stride = imageSize * imageSize * INPUT_CHANNELS;
  const data = new Float32Array(batch * stride);
  instances.forEach((inst, b) => {
    const base = b * stride;
    for (let y = 0; y < imageSize; y++) {
      for (let x = 0; x < imageSize; x++) {
        const o = base + (y * imageSize + x) * INPUT_CHANNELS;
        data[o] = inst.pixels[y * imageSize + x];
        data[o + 1] = (x + 0.5) / imageSize;
        data[o + 2] = (y + 0.5) / imageSize;
      }
    }
  });
  return tf.tensor4d(data, [batch, imageSize, imageSize, INPUT_CHANNELS]);
}

function toBatch(instances: Instance[], imageSize: number) {
  return {
    images: buildImages(instances, imageSize),
    classIdx: instances.map((inst) => inst.classIndex),
  };
}

function readPredictions(
  boxes: tf.Tensor3D,
  logits: tf.Tensor2D,
): { boxArr: Box[][]; logitArr: number[][] } {
  const boxArr = boxes.arraySync() as unknown as Box[][];
  const logitArr = logits.arraySync() as number[][];
  return { boxArr, logitArr };
}

function tensorGiouFlat(pred: tf.Tensor2D, gt: tf.Tensor2D): tf.Tensor1D {
  const [px, py, pw, ph] = tf.split(pred, 4, 1).map((t) => t.squeeze([1]));
  const [gx, gy, gw, gh] = tf.split(gt, 4, 1).map((t) => t.squeeze([1]));
  const px2 = px.add(pw);
  const py2 = py.add(ph);
  const gx2 = gx.add(gw);
  const gy2 = gy.add(gh);
  const ix = tf.minimum(px2, gx2).sub(tf.maximum(px, gx)).relu();
  const iy = tf.minimum(py2, gy2).sub(tf.maximum(py, gy)).relu();
  const inter = ix.mul(iy);
  const union = pw.mul(ph).add(gw.mul(gh)).sub(inter);
  const cw = tf.maximum(px2, gx2).sub(tf.minimum(px, gx));
  const ch = tf.maximum(py2, gy2).sub(tf.minimum(py, gy));
  const enclosing = cw.mul(ch);
  return inter
    .div(union)
    .sub(enclosing.sub(union).div(enclosing)) as tf.Tensor1D;
}

export function batchLoss(
  model: PlacementModel,
  images: tf.Tensor4D,
  classIdx: number[],
  instances: Instance[],
): { loss: number; grads: tf.NamedTensorMap } {
  // assignment and IoU targets come from a detached forward pass
  const detached = model.forward(images, classIdx);
  const { boxArr } = readPredictions(detached.boxes, detached.logits);
  detached.boxes.dispose();
  detached.logits.dispose();

  // flatten matched pairs across the batch; coefficient folds in the
  // per-instance mean over pairs and the mean over instances, so the
  // box term is a single weighted sum
  const queries = model.cfg.queries;
  const flatPredIdx: number[] = [];
  const gtRows: Box[] = [];
  const coefficients: number[] = [];
  const targetRows: number[][] = [];
  instances.forEach((inst, b) => {
    const pairs: MatchPairs = matchPredictions(boxArr[b], inst.supervision);
    targetRows.push(plausibilityTargets(boxArr[b], inst.supervision));
    for (const [pi, si] of pairs) {
      flatPredIdx.push(b * queries + pi);
      gtRows.push(inst.supervision.boxes[si]);
      coefficients.push(
        (0.5 + 0.5 * inst.supervision.rewards[si]) /
          (pairs.length * instances.length),
      );
    }
  });

  const { value, grads } = tf.variableGrads(() => {
    const out = model.forward(images, classIdx);
    let bbox: tf.Scalar = tf.scalar(0);
    if (flatPredIdx.length > 0) {
      const flatBoxes = out.boxes.reshape([
        instances.length * queries,
        4,
      ]) as tf.Tensor2D;
      // one-hot selection: gather's gradient kernel is missing on wasm
      const selector = tf.oneHot(
        tf.tensor1d(flatPredIdx, "int32"),
        instances.length * queries,
      );
      const matchedPred = selector.matMul(flatBoxes) as tf.Tensor2D;
      const matchedGt = tf.tensor2d(gtRows as number[][], [gtRows.length, 4]);
      const l1 = matchedPred.sub(matchedGt).abs().sum(1);
      const giouTerm = tf.scalar(1).sub(tensorGiouFlat(matchedPred, matchedGt));
      bbox = l1
        .mul(L1_WEIGHT)
        .add(giouTerm.mul(GIOU_WEIGHT))
        .mul(tf.tensor1d(coefficients))
        .sum() as tf.Scalar;
    }
    const plaus = tf
      .sigmoid(out.logits)
      .sub(tf.tensor2d(targetRows, [instances.length, queries]))
      .square()
      .mean() as tf.Scalar;
    return bbox.add(plaus.mul(PLAUSIBILITY_WEIGHT)) as tf.Scalar;
  }, model.trainables);
  const loss = value.dataSync()[0];
  value.dispose();
  return { loss, grads };
}

function clipGradients(grads: tf.NamedTensorMap, clipNorm: number): void {
  const names = Object.keys(grads);
  const globalNorm = tf.tidy(() =>
    tf
      .addN(names.map((name) => grads[name].square().sum()))
      .sqrt()
      .dataSync(),
  )[0];
  if (globalNorm > clipNorm && globalNorm > 0) {
    const scale = clipNorm / globalNorm;
    for (const name of names) {
      const clipped = tf.tidy(() => grads[name].mul(scale));
      grads[name].dispose();
      grads[name] = clipped;
    }
  }
}

export function train(
  model: PlacementModel,
  instances: Instance[],
  onEpoch?: (epoch: number, loss: number) => void | boolean,
): TrainResult {
  const cfg: ModelConfig = model.cfg;
  const optimizer = tf.train.adam(cfg.lr);
  const history: number[] = [];
  let bestLoss = Infinity;
  let sinceBest = 0;

  const batches: Instance[][] = [];
  for (let i = 0; i < instances.length; i += cfg.batch) {
    batches.push(instances.slice(i, i + cfg.batch));
  }
  const tensors = batches.map((b) => toBatch(b, cfg.imageSize));

  let epoch = 0;
  try {
    for (epoch = 1; epoch <= cfg.maxEpochs; epoch++) {
      let epochLoss = 0;
      for (let bi = 0; bi < batches.length; bi++) {
        const { loss, grads } = batchLoss(
          model,
          tensors[bi].images,
          tensors[bi].classIdx,
          batches[bi],
        );
        if (!Number.isFinite(loss)) {
          throw new Error(
            `loss diverged (${loss}) at epoch ${epoch}, batch ${bi}; ` +
              `lr=${cfg.lr}, clip=${cfg.gradClipNorm}`,
          );
        }
        clipGradients(grads, cfg.gradClipNorm);
        // tfjs types want NamedVariableMap here, but NamedTensorMap is what
        // variableGrads returns and what the runtime accepts
        optimizer.applyGradients(
          grads as unknown as Parameters<typeof optimizer.applyGradients>[0],
        );
        Object.values(grads).forEach((g) => g.dispose());
        model.applyWeightDecay();
        epochLoss += loss * batches[bi].length;
      }
      epochLoss /= instances.length;
      history.push(epochLoss);
      if (onEpoch?.(epoch, epochLoss) === true) break;  // caller-requested stop
      if (epochLoss < bestLoss - 1e-6) {
        bestLoss = epochLoss;
        sinceBest = 0;
      } else if (++sinceBest >= cfg.patience) {
        break;
      }
    }
  } finally {
    tensors.forEach(({ images }) => images.dispose());
    optimizer.dispose();
  }
  return {
    epochs: Math.min(epoch, cfg.maxEpochs),
    finalLoss: history[history.length - 1] ?? Infinity,
    bestLoss,
    history,
  };
}

/** Ranked predictions per instance, highest plausibility first. */
export function predict(
  model: PlacementModel,
  instances: Instance[],
  topN = 5,
): RankedPrediction[][] {
  const { images, classIdx } = toBatch(instances, model.cfg.imageSize);
  const out = model.forward(images, classIdx);
  const { boxArr, logitArr } = readPredictions(out.boxes, out.logits);
  images.dispose();
  out.boxes.dispose();
  out.logits.dispose();
  return instances.map((_, b) => {
    const ranked = boxArr[b]
      .map((box, q) => ({
        box,
        score: 1 / (1 + Math.exp(-logitArr[b][q])),
      }))
      .sort((a, c) => c.score - a.score);
    return ranked.slice(0, topN);
  });
}

/** Fraction of instances whose top-1 box reaches IoU >= 0.5 on supervision. */
export function iou50At1(
  model: PlacementModel,
  instances: Instance[],
): number {
  const ranked = predict(model, instances, 1);
  let hits = 0;
  instances.forEach((inst, i) => {
    const top = ranked[i][0];
    const best = inst.supervision.boxes.reduce(
      (acc, g) => Math.max(acc, iou(top.box, g)),
      0,
    );
    if (best >= 0.5) hits++;
  });
  return hits / instances.length;
}

/** Engine-compatible predictions JSONL (pixel units, ranked by score). */
export function writePredictionsJsonl(
  model: PlacementModel,
  instances: Instance[],
  path: string,
  topN = 5,
): void {
  const ranked = predict(model, instances, topN);
  const lines = instances.map((inst, i) => {
    const side = inst.imageSide;
    return JSON.stringify({
      scene_id: inst.sceneId,
      object_class: inst.objectClass,
      predictions: ranked[i].map(({ box, score }) => ({
        box: [box[0] * side, box[1] * side, box[2] * side, box[3] * side],
        score,
      })),
    });
  });
  writeFileSync(path, lines.join("\n") + "\n");
}

export function saveCheckpoint(
  model: PlacementModel,
  path: string,
  extra: Record<string, unknown> = {},
): void {
  writeFileSync(
    path,
    JSON.stringify({ config: model.cfg, weights: model.serializeWeights(), ...extra }),
  );
}
