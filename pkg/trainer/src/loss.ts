/**
 * Matching and losses, mirroring the engine's reference formulas:
 * bbox loss is the mean over Hungarian-matched pairs of
 * (0.5 + 0.5 * reward) * (5 * L1 + 2 * (1 - GIoU)); the plausibility loss
 * regresses sigmoid(logit) onto each query's best IoU against supervision;
 * total = bbox + 0.5 * plausibility.
 *
 * Two implementations: a float64 number-space path used for oracle
 * cross-checks, and a float32 tensor path used for gradients. The tensor
 * path takes the assignment and IoU targets as fixed inputs (recomputed
 * from detached predictions every step), the standard set-prediction
 * training arrangement.
 */

import * as tf from "@tensorflow/tfjs";
import { Box, GIOU_WEIGHT, L1_WEIGHT, iou, matchCost } from "./boxes.js";
import { hungarian } from "./hungarian.js";

export const PLAUSIBILITY_WEIGHT = 0.5;

export interface Supervision {
  boxes: Box[];
  rewards: number[];
}

export type MatchPairs = Array<[number, number]>; // (predIndex, supIndex)

export function matchPredictions(predBoxes: Box[], sup: Supervision): MatchPairs {
  if (sup.boxes.length === 0 || predBoxes.length === 0) return [];
  const cost = predBoxes.map((p) => sup.boxes.map((g) => matchCost(p, g)));
  const { pairs } = hungarian(cost);
  const out: MatchPairs = [];
  pairs.forEach((supIdx, predIdx) => {
    if (supIdx >= 0) out.push([predIdx, supIdx]);
  });
  out.sort((a, b) => a[1] - b[1]);
  return out;
}

export function plausibilityTargets(predBoxes: Box[], sup: Supervision): number[] {
  return predBoxes.map((p) =>
    sup.boxes.reduce((best, g) => Math.max(best, iou(p, g)), 0),
  );
}

const sigmoid = (x: number) => 1 / (1 + Math.exp(-x));

export interface LossBreakdown {
  bbox: number;
  plausibility: number;
  total: number;
}

/** Float64 loss on plain numbers; matches the engine's loss-ref output. */
export function numericLoss(
  predBoxes: Box[],
  logits: number[],
  sup: Supervision,
  pairs?: MatchPairs,
  targets?: number[],
): LossBreakdown {
  const matched = pairs ?? matchPredictions(predBoxes, sup);
  let bbox = 0;
  if (matched.length > 0) {
    for (const [pi, si] of matched) {
      const weight = 0.5 + 0.5 * sup.rewards[si];
      bbox += weight * matchCost(predBoxes[pi], sup.boxes[si]);
    }
    bbox /= matched.length;
  }
  const t = targets ?? plausibilityTargets(predBoxes, sup);
  let plausibility = 0;
  if (predBoxes.length > 0) {
    for (let j = 0; j < predBoxes.length; j++) {
      plausibility += (sigmoid(logits[j]) - t[j]) ** 2;
    }
    plausibility /= predBoxes.length;
  }
  return {
    bbox,
    plausibility,
    total: bbox + PLAUSIBILITY_WEIGHT * plausibility,
  };
}

function tensorGiou(pred: tf.Tensor2D, gt: tf.Tensor2D): tf.Tensor1D {
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

/**
 * Differentiable loss for one instance. `boxes` is [Q, 4], `logits` [Q];
 * assignment pairs and plausibility targets are fixed inputs.
 */
export function tensorLoss(
  boxes: tf.Tensor2D,
  logits: tf.Tensor1D,
  sup: Supervision,
  pairs: MatchPairs,
  targets: number[],
): tf.Scalar {
  return tf.tidy(() => {
    let bbox: tf.Scalar = tf.scalar(0);
    if (pairs.length > 0) {
      const predIdx = pairs.map(([pi]) => pi);
      const supIdx = pairs.map(([, si]) => si);
      const matchedPred = tf.gather(boxes, predIdx) as tf.Tensor2D;
      const matchedGt = tf.tensor2d(
        supIdx.map((si) => sup.boxes[si]),
        [pairs.length, 4],
      );
      const weights = tf.tensor1d(
        supIdx.map((si) => 0.5 + 0.5 * sup.rewards[si]),
      );
      const l1 = matchedPred.sub(matchedGt).abs().sum(1);
      const giouTerm = tf.scalar(1).sub(tensorGiou(matchedPred, matchedGt));
      const perPair = l1
        .mul(L1_WEIGHT)
        .add(giouTerm.mul(GIOU_WEIGHT))
        .mul(weights);
      bbox = perPair.mean() as tf.Scalar;
    }
    const plaus = tf
      .sigmoid(logits)
      .sub(tf.tensor1d(targets))
      .square()
      .mean() as tf.Scalar;
    return bbox.add(plaus.mul(PLAUSIBILITY_WEIGHT)) as tf.Scalar;
  });
}
