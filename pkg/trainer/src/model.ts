/**
 * DETR-style placement model: a frozen random CNN backbone feeds a
 * transformer encoder; class-conditioned learnable queries decode into a
 * bounding-box head (normalized x, y, w, h through a sigmoid) and a
 * plausibility head (one logit per query, ranked by sigmoid at inference).
 *
 * The class embedding is replicated across all queries and added to the
 * learnable query embeddings. The backbone input carries two coordinate
 * channels next to the grayscale raster; with a random frozen backbone
 * that is what lets spatial position survive into the token features.
 *
 * Two desk-scale accommodations keep the tiny model trainable in
 * hundreds of steps: residual blocks are pre-LN, and the mean-pooled
 * encoder memory is projected and added to every query, so scene content
 * reaches the heads first-order instead of waiting for cross-attention
 * to sharpen. Reference-scale defaults live in REFERENCE_CONFIG; tests shrink
 * them.
 */

import * as tf from "@tensorflow/tfjs";

export interface ModelConfig {
  encoderLayers: number;
  decoderLayers: number;
  hiddenDim: number;
  heads: number;
  ffnDim: number;
  queries: number;
  bboxHeadLayers: number;
  plausibilityHeadLayers: number;
  backboneChannels: number;
  lr: number;
  weightDecay: number;
  gradClipNorm: number;
  batch: number;
  maxEpochs: number;
  patience: number;
  numClasses: number;
  imageSize: number;
  seed: number;
}

export const REFERENCE_CONFIG: Omit<ModelConfig, "numClasses" | "imageSize"> = {
  encoderLayers: 6,
  decoderLayers: 6,
  hiddenDim: 256,
  heads: 8,
  ffnDim: 2048,
  queries: 50,
  bboxHeadLayers: 3,
  plausibilityHeadLayers: 2,
  backboneChannels: 64,
  lr: 1e-4,
  weightDecay: 1e-4,
  gradClipNorm: 0.1,
  batch: 128,
  maxEpochs: 200,
  patience: 15,
  seed: 0,
};

export function deskConfig(
  numClasses: number,
  imageSize: number,
  overrides: Partial<ModelConfig> = {},
): ModelConfig {
  return {
    ...REFERENCE_CONFIG,
    encoderLayers: 1,
    decoderLayers: 2,
    hiddenDim: 32,
    heads: 2,
    ffnDim: 64,
    queries: 8,
    backboneChannels: 16,
    lr: 1e-2,          // desk scale trains in hundreds of steps, not epochs
    gradClipNorm: 1.0, // the reference 0.1 starves the tiny model
    batch: 10,
    maxEpochs: 400,
    patience: 60,
    numClasses,
    imageSize,
    ...overrides,
  };
}

interface AttentionParams {
  wq: tf.Variable;
  wk: tf.Variable;
  wv: tf.Variable;
  wo: tf.Variable;
  bq: tf.Variable;
  bk: tf.Variable;
  bv: tf.Variable;
  bo: tf.Variable;
}

interface LayerNormParams {
  gain: tf.Variable;
  bias: tf.Variable;
}

interface FfnParams {
  w1: tf.Variable;
  b1: tf.Variable;
  w2: tf.Variable;
  b2: tf.Variable;
}

interface EncoderLayer {
  attn: AttentionParams;
  ln1: LayerNormParams;
  ffn: FfnParams;
  ln2: LayerNormParams;
}

interface DecoderLayer {
  selfAttn: AttentionParams;
  ln1: LayerNormParams;
  crossAttn: AttentionParams;
  ln2: LayerNormParams;
  ffn: FfnParams;
  ln3: LayerNormParams;
}

interface DenseParams {
  w: tf.Variable;
  b: tf.Variable;
}

export const INPUT_CHANNELS = 3; // grayscale + two coordinate channels

export interface ModelOutput {
  /** [batch, queries, 4] normalized (x, y, w, h) */
  boxes: tf.Tensor3D;
  /** [batch, queries] plausibility logits */
  logits: tf.Tensor2D;
}

function sinusoidalPositions(tokens: number, dim: number): tf.Tensor2D {
  const data = new Float32Array(tokens * dim);
  for (let pos = 0; pos < tokens; pos++) {
    for (let i = 0; i < dim; i++) {
      const angle = pos / Math.pow(10000, (2 * Math.floor(i / 2)) / dim);
      data[pos * dim + i] = i % 2 === 0 ? Math.sin(angle) : Math.cos(angle);
    }
  }
  return tf.tensor2d(data, [tokens, dim]);
}

export class PlacementModel {
  readonly cfg: ModelConfig;
  readonly trainables: tf.Variable[] = [];
  readonly frozen: tf.Variable[] = [];

  private seedCounter: number;
  private conv1!: tf.Variable;
  private conv2!: tf.Variable;
  private tokenProj!: DenseParams;
  private posEncoding!: tf.Tensor2D;
  private classEmbed!: tf.Variable;
  private queryEmbed!: tf.Variable;
  private contextProj!: DenseParams;
  private encoderNorm!: LayerNormParams;
  private decoderNorm!: LayerNormParams;
  private encoder: EncoderLayer[] = [];
  private decoder: DecoderLayer[] = [];
  private bboxHead: DenseParams[] = [];
  private plausHead: DenseParams[] = [];

  constructor(cfg: ModelConfig) {
    if (cfg.hiddenDim % cfg.heads !== 0) {
      throw new Error("hiddenDim must be divisible by heads");
    }
    this.cfg = cfg;
    this.seedCounter = cfg.seed * 1000 + 1;
    this.build();
  }

  private nextSeed(): number {
    return this.seedCounter++;
  }

  private weight(
    shape: number[],
    trainable: boolean,
    fanIn: number,
    fanOut: number,
  ): tf.Variable {
    const std = Math.sqrt(2 / (fanIn + fanOut));
    const v = tf.variable(
      tf.randomNormal(shape, 0, std, "float32", this.nextSeed()),
      trainable,
    );
    (trainable ? this.trainables : this.frozen).push(v);
    return v;
  }

  private zeros(shape: number[]): tf.Variable {
    const v = tf.variable(tf.zeros(shape), true);
    this.trainables.push(v);
    return v;
  }

  private ones(shape: number[]): tf.Variable {
    const v = tf.variable(tf.ones(shape), true);
    this.trainables.push(v);
    return v;
  }

  private dense(inDim: number, outDim: number): DenseParams {
    return {
      w: this.weight([inDim, outDim], true, inDim, outDim),
      b: this.zeros([outDim]),
    };
  }

  private attention(dim: number): AttentionParams {
    return {
      wq: this.weight([dim, dim], true, dim, dim),
      wk: this.weight([dim, dim], true, dim, dim),
      wv: this.weight([dim, dim], true, dim, dim),
      wo: this.weight([dim, dim], true, dim, dim),
      bq: this.zeros([dim]),
      bk: this.zeros([dim]),
      bv: this.zeros([dim]),
      bo: this.zeros([dim]),
    };
  }

  private layerNorm(dim: number): LayerNormParams {
    return { gain: this.ones([dim]), bias: this.zeros([dim]) };
  }

  private ffn(dim: number, inner: number): FfnParams {
    return {
      w1: this.weight([dim, inner], true, dim, inner),
      b1: this.zeros([inner]),
      w2: this.weight([inner, dim], true, inner, dim),
      b2: this.zeros([dim]),
    };
  }

  private build(): void {
    const { cfg } = this;
    const c1 = Math.max(4, Math.floor(cfg.backboneChannels / 2));
    // frozen random backbone: two stride-2 convolutions over
    // [gray, x/side, y/side] input channels
    this.conv1 = this.weight([3, 3, INPUT_CHANNELS, c1], false,
                             9 * INPUT_CHANNELS, 9 * c1);
    this.conv2 = this.weight(
      [3, 3, c1, cfg.backboneChannels],
      false,
      9 * c1,
      9 * cfg.backboneChannels,
    );
    const gridSide = Math.ceil(cfg.imageSize / 4);
    const tokens = gridSide * gridSide;
    this.tokenProj = this.dense(cfg.backboneChannels, cfg.hiddenDim);
    this.posEncoding = sinusoidalPositions(tokens, cfg.hiddenDim);
    this.classEmbed = this.weight(
      [cfg.numClasses, cfg.hiddenDim],
      true,
      cfg.numClasses,
      cfg.hiddenDim,
    );
    this.queryEmbed = this.weight(
      [cfg.queries, cfg.hiddenDim],
      true,
      cfg.queries,
      cfg.hiddenDim,
    );
    this.contextProj = this.dense(cfg.hiddenDim, cfg.hiddenDim);
    this.encoderNorm = this.layerNorm(cfg.hiddenDim);
    this.decoderNorm = this.layerNorm(cfg.hiddenDim);
    for (let i = 0; i < cfg.encoderLayers; i++) {
      this.encoder.push({
        attn: this.attention(cfg.hiddenDim),
        ln1: this.layerNorm(cfg.hiddenDim),
        ffn: this.ffn(cfg.hiddenDim, cfg.ffnDim),
        ln2: this.layerNorm(cfg.hiddenDim),
      });
    }
    for (let i = 0; i < cfg.decoderLayers; i++) {
      this.decoder.push({
        selfAttn: this.attention(cfg.hiddenDim),
        ln1: this.layerNorm(cfg.hiddenDim),
        crossAttn: this.attention(cfg.hiddenDim),
        ln2: this.layerNorm(cfg.hiddenDim),
        ffn: this.ffn(cfg.hiddenDim, cfg.ffnDim),
        ln3: this.layerNorm(cfg.hiddenDim),
      });
    }
    for (let i = 0; i < cfg.bboxHeadLayers; i++) {
      const outDim = i === cfg.bboxHeadLayers - 1 ? 4 : cfg.hiddenDim;
      this.bboxHead.push(this.dense(cfg.hiddenDim, outDim));
    }
    for (let i = 0; i < cfg.plausibilityHeadLayers; i++) {
      const outDim = i === cfg.plausibilityHeadLayers - 1 ? 1 : cfg.hiddenDim;
      this.plausHead.push(this.dense(cfg.hiddenDim, outDim));
    }
  }

  /** [B, T, D] x [D, O] dense; reshaped to 2-D because tfjs cannot
      backpropagate through a rank-broadcast matMul */
  private denseApply(
    x: tf.Tensor3D,
    w: tf.Variable,
    b?: tf.Variable,
  ): tf.Tensor3D {
    const [batch, t, d] = x.shape;
    const outDim = w.shape[1] as number;
    let flat = x.reshape([batch * t, d]).matMul(w as unknown as tf.Tensor2D);
    if (b) flat = flat.add(b);
    return flat.reshape([batch, t, outDim]) as tf.Tensor3D;
  }

  private applyLayerNorm(x: tf.Tensor3D, p: LayerNormParams): tf.Tensor3D {
    const { mean, variance } = tf.moments(x, -1, true);
    return x
      .sub(mean)
      .div(variance.add(1e-5).sqrt())
      .mul(p.gain)
      .add(p.bias) as tf.Tensor3D;
  }

  private applyAttention(
    queries: tf.Tensor3D,
    memory: tf.Tensor3D,
    p: AttentionParams,
  ): tf.Tensor3D {
    const { heads, hiddenDim } = this.cfg;
    const headDim = hiddenDim / heads;
    const [b, tq] = queries.shape;
    const tk = memory.shape[1];
    const split = (x: tf.Tensor3D, t: number) =>
      x.reshape([b, t, heads, headDim]).transpose([0, 2, 1, 3]);
    const q = split(this.denseApply(queries, p.wq, p.bq), tq);
    const k = split(this.denseApply(memory, p.wk, p.bk), tk);
    const v = split(this.denseApply(memory, p.wv, p.bv), tk);
    const scores = q.matMul(k, false, true).div(Math.sqrt(headDim));
    const mixed = tf.softmax(scores, -1).matMul(v);
    const merged = mixed
      .transpose([0, 2, 1, 3])
      .reshape([b, tq, hiddenDim]) as tf.Tensor3D;
    return this.denseApply(merged, p.wo, p.bo);
  }

  private applyFfn(x: tf.Tensor3D, p: FfnParams): tf.Tensor3D {
    const inner = this.denseApply(x, p.w1, p.b1).relu() as tf.Tensor3D;
    return this.denseApply(inner, p.w2, p.b2);
  }

  private runHead(x: tf.Tensor3D, head: DenseParams[]): tf.Tensor3D {
    let out = x;
    head.forEach((layer, i) => {
      out = this.denseApply(out, layer.w, layer.b);
      if (i < head.length - 1) out = out.relu() as tf.Tensor3D;
    });
    return out;
  }

  /** images: [batch, imageSize, imageSize, 3]; classIdx: one per instance. */
  forward(images: tf.Tensor4D, classIdx: number[]): ModelOutput {
    return tf.tidy(() => {
      const batch = images.shape[0];
      const h1 = tf
        .conv2d(images, this.conv1 as unknown as tf.Tensor4D, 2, "same")
        .relu() as tf.Tensor4D;
      const h2 = tf
        .conv2d(h1, this.conv2 as unknown as tf.Tensor4D, 2, "same")
        .relu() as tf.Tensor4D;
      const [, gh, gw, ch] = h2.shape;
      let memory = h2.reshape([batch, gh * gw, ch]) as tf.Tensor3D;
      memory = this.denseApply(memory, this.tokenProj.w, this.tokenProj.b)
        .add(this.posEncoding) as tf.Tensor3D;
      for (const layer of this.encoder) {
        const normed = this.applyLayerNorm(memory, layer.ln1);
        memory = memory.add(
          this.applyAttention(normed, normed, layer.attn),
        ) as tf.Tensor3D;
        memory = memory.add(
          this.applyFfn(this.applyLayerNorm(memory, layer.ln2), layer.ffn),
        ) as tf.Tensor3D;
      }
      memory = this.applyLayerNorm(memory, this.encoderNorm);

      // one-hot matmul instead of gather: the wasm backend has no
      // UnsortedSegmentSum kernel for gather's gradient; oneHot needs
      // depth >= 2, so pad and slice for single-class vocabularies
      const depth = Math.max(2, this.cfg.numClasses);
      const classSelect = tf
        .oneHot(tf.tensor1d(classIdx, "int32"), depth)
        .slice([0, 0], [classIdx.length, this.cfg.numClasses]);
      const classVectors = classSelect.matMul(
        this.classEmbed as unknown as tf.Tensor2D,
      );
      // pooled scene context, projected and added to every query
      const context = this.denseApply(
        memory.mean(1, true) as tf.Tensor3D,
        this.contextProj.w,
        this.contextProj.b,
      );
      // the class embedding is replicated across every query and added
      let queries = this.queryEmbed
        .expandDims(0)
        .add(classVectors.expandDims(1))
        .add(context) as tf.Tensor3D;
      for (const layer of this.decoder) {
        queries = queries.add(
          this.applyAttention(
            this.applyLayerNorm(queries, layer.ln1),
            this.applyLayerNorm(queries, layer.ln1),
            layer.selfAttn,
          ),
        ) as tf.Tensor3D;
        queries = queries.add(
          this.applyAttention(
            this.applyLayerNorm(queries, layer.ln2),
            memory,
            layer.crossAttn,
          ),
        ) as tf.Tensor3D;
        queries = queries.add(
          this.applyFfn(this.applyLayerNorm(queries, layer.ln3), layer.ffn),
        ) as tf.Tensor3D;
      }
      queries = this.applyLayerNorm(queries, this.decoderNorm);

      const boxes = tf.sigmoid(this.runHead(queries, this.bboxHead));
      const logits = this.runHead(queries, this.plausHead).squeeze([2]);
      return {
        boxes: boxes as tf.Tensor3D,
        logits: logits as tf.Tensor2D,
      };
    });
  }

  /** Decoupled weight decay on matrix-shaped trainables (not biases/norms). */
  applyWeightDecay(): void {
    const factor = 1 - this.cfg.lr * this.cfg.weightDecay;
    if (factor >= 1) return;
    tf.tidy(() => {
      for (const v of this.trainables) {
        if (v.shape.length >= 2) {
          v.assign(v.mul(factor));
        }
      }
    });
  }

  backboneSnapshot(): Float32Array[] {
    return [
      this.conv1.dataSync() as Float32Array,
      this.conv2.dataSync() as Float32Array,
    ].map((a) => new Float32Array(a));
  }

  serializeWeights(): Record<string, { shape: number[]; values: number[] }> {
    const out: Record<string, { shape: number[]; values: number[] }> = {};
    [...this.trainables, ...this.frozen].forEach((v, i) => {
      out[`var_${i}`] = {
        shape: v.shape.slice(),
        values: Array.from(v.dataSync() as Float32Array),
      };
    });
    return out;
  }

  loadWeights(payload: Record<string, { shape: number[]; values: number[] }>): void {
    [...this.trainables, ...this.frozen].forEach((v, i) => {
      const entry = payload[`var_${i}`];
      if (!entry) throw new Error(`checkpoint is missing var_${i}`);
      v.assign(tf.tensor(entry.values, entry.shape as number[], "float32"));
    });
  }

  dispose(): void {
    [...this.trainables, ...this.frozen].forEach((v) => v.dispose());
    this.posEncoding.dispose();
  }
}
