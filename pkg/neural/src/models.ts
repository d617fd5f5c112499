/** Attacker architectures: BiLSTM-with-attention and a compact transformer
 * encoder trained from scratch over the bucket-token vocabulary. */
import * as tf from "@tensorflow/tfjs";
import { VOCAB_SIZE } from "./encoding.js";

export interface LstmParams {
  layers: number;
  hiddenUnits: number;
  embedDim: number;
  attentionDim: number;
  bidirectional: boolean;
  dropout: number;
  headWidths: number[];
  learningRate: number;
  batchSize: number;
  patience: number;
  maxEpochs: number;
}

export const LSTM_DEFAULTS: LstmParams = {
  layers: 2,
  hiddenUnits: 128,
  embedDim: 32,
  attentionDim: 64,
  bidirectional: true,
  dropout: 0.3,
  headWidths: [128, 64],
  learningRate: 2e-4,
  batchSize: 32,
  patience: 20,
  maxEpochs: 100,
};

export interface TransformerParams {
  dModel: number;
  heads: number;
  blocks: number;
  ffnDim: number;
  dropout: number;
  headWidths: number[];
  learningRate: number;
  headLrMultiplier: number;
  batchSize: number;
  patience: number;
  maxEpochs: number;
}

export const TRANSFORMER_DEFAULTS: TransformerParams = {
  dModel: 64,
  heads: 4,
  blocks: 2,
  ffnDim: 128,
  dropout: 0.3,
  headWidths: [128, 64],
  learningRate: 2e-4,
  headLrMultiplier: 100,
  batchSize: 32,
  patience: 20,
  maxEpochs: 100,
};

/** Embedding via one-hot matMul: the gather gradient (UnsortedSegmentSum)
 * is unavailable on the WASM backend, matMul gradients are universal. */
class OneHotEmbedding extends tf.layers.Layer {
  static className = "OneHotEmbedding";
  private readonly vocabSize: number;
  private readonly outputDim: number;
  private readonly stddev: number;
  private readonly seed: number;
  private table!: tf.LayerVariable;

  constructor(config: { vocabSize: number; outputDim: number; stddev: number;
                        seed: number; name?: string }) {
    super({ name: config.name });
    this.vocabSize = config.vocabSize;
    this.outputDim = config.outputDim;
    this.stddev = config.stddev;
    this.seed = config.seed;
  }

  override build(): void {
    this.table = this.addWeight("table", [this.vocabSize, this.outputDim],
      "float32",
      tf.initializers.randomNormal({ stddev: this.stddev, seed: this.seed }));
    this.built = true;
  }

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor2D;
      const [b, t] = x.shape;
      const hot = tf.reshape(tf.oneHot(tf.cast(x, "int32"), this.vocabSize),
                             [b * t, this.vocabSize]);
      return tf.reshape(tf.matMul(hot, this.table.read() as tf.Tensor2D),
                        [b, t, this.outputDim]);
    });
  }

  override computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return [inputShape[0], inputShape[1], this.outputDim];
  }

  override getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), vocabSize: this.vocabSize,
             outputDim: this.outputDim, stddev: this.stddev, seed: this.seed };
  }
}
tf.serialization.registerClass(OneHotEmbedding);

/** Additive attention pooling: softmax(v . tanh(W h_t)) weighted sum. */
class AttentionPool extends tf.layers.Layer {
  static className = "AttentionPool";
  private readonly attentionDim: number;
  private readonly seed: number;
  private w!: tf.LayerVariable;
  private b!: tf.LayerVariable;
  private v!: tf.LayerVariable;

  constructor(config: { attentionDim: number; seed: number; name?: string }) {
    super({ name: config.name });
    this.attentionDim = config.attentionDim;
    this.seed = config.seed;
  }

  override build(inputShape: tf.Shape | tf.Shape[]): void {
    const shape = inputShape as tf.Shape;
    const h = shape[shape.length - 1] as number;
    this.w = this.addWeight("w", [h, this.attentionDim], "float32",
      tf.initializers.glorotUniform({ seed: this.seed }));
    this.b = this.addWeight("b", [this.attentionDim], "float32",
      tf.initializers.zeros());
    this.v = this.addWeight("v", [this.attentionDim, 1], "float32",
      tf.initializers.glorotUniform({ seed: this.seed + 1 }));
    this.built = true;
  }

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      const [b, t, h] = x.shape as [number, number, number];
      // 2-D matMuls: the rank-3 x rank-2 broadcast has no usable gradient
      // on this backend
      const flat = tf.reshape(x, [b * t, h]);
      const u = tf.tanh(tf.add(tf.matMul(flat, this.w.read() as tf.Tensor2D),
                               this.b.read()));
      const scores = tf.reshape(
        tf.matMul(u, this.v.read() as tf.Tensor2D), [b, t]);
      const alpha = tf.expandDims(tf.softmax(scores, -1), 2);
      return tf.sum(tf.mul(x, alpha), 1); // (B,H)
    });
  }

  override computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return [inputShape[0], inputShape[2]];
  }

  override getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), attentionDim: this.attentionDim, seed: this.seed };
  }
}
tf.serialization.registerClass(AttentionPool);

/** Trainable positional embedding added to the token embedding. */
class PositionalEmbedding extends tf.layers.Layer {
  static className = "PositionalEmbedding";
  private readonly maxLen: number;
  private readonly dModel: number;
  private readonly seed: number;
  private table!: tf.LayerVariable;

  constructor(config: { maxLen: number; dModel: number; seed: number; name?: string }) {
    super({ name: config.name });
    this.maxLen = config.maxLen;
    this.dModel = config.dModel;
    this.seed = config.seed;
  }

  override build(): void {
    this.table = this.addWeight("table", [this.maxLen, this.dModel], "float32",
      tf.initializers.randomNormal({ stddev: 0.02, seed: this.seed }));
    this.built = true;
  }

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      const t = x.shape[1] as number;
      const pos = tf.slice(this.table.read() as tf.Tensor2D, [0, 0],
                           [t, this.dModel]);
      return tf.add(x, tf.expandDims(pos, 0));
    });
  }

  override computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return inputShape;
  }

  override getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), maxLen: this.maxLen, dModel: this.dModel,
             seed: this.seed };
  }
}
tf.serialization.registerClass(PositionalEmbedding);

/** Multi-head self-attention over a (B, T, d) sequence. */
class MultiHeadSelfAttention extends tf.layers.Layer {
  static className = "MultiHeadSelfAttention";
  private readonly dModel: number;
  private readonly heads: number;
  private readonly seed: number;
  private wq!: tf.LayerVariable;
  private wk!: tf.LayerVariable;
  private wv!: tf.LayerVariable;
  private wo!: tf.LayerVariable;

  constructor(config: { dModel: number; heads: number; seed: number; name?: string }) {
    super({ name: config.name });
    if (config.dModel % config.heads !== 0) {
      throw new Error("dModel must be divisible by heads");
    }
    this.dModel = config.dModel;
    this.heads = config.heads;
    this.seed = config.seed;
  }

  override build(): void {
    const init = (offset: number) =>
      tf.initializers.glorotUniform({ seed: this.seed + offset });
    this.wq = this.addWeight("wq", [this.dModel, this.dModel], "float32", init(0));
    this.wk = this.addWeight("wk", [this.dModel, this.dModel], "float32", init(1));
    this.wv = this.addWeight("wv", [this.dModel, this.dModel], "float32", init(2));
    this.wo = this.addWeight("wo", [this.dModel, this.dModel], "float32", init(3));
    this.built = true;
  }

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      const [b, t] = [x.shape[0] as number, x.shape[1] as number];
      const dh = this.dModel / this.heads;
      const flat = tf.reshape(x, [b * t, this.dModel]);
      const project = (w: tf.LayerVariable) =>
        tf.transpose(
          tf.reshape(tf.matMul(flat, w.read() as tf.Tensor2D),
                     [b, t, this.heads, dh]),
          [0, 2, 1, 3]); // (B, heads, T, dh)
      const q = project(this.wq);
      const k = project(this.wk);
      const v = project(this.wv);
      const scores = tf.div(tf.matMul(q, k, false, true), Math.sqrt(dh));
      const ctx = tf.matMul(tf.softmax(scores, -1), v); // (B, heads, T, dh)
      const merged = tf.reshape(tf.transpose(ctx, [0, 2, 1, 3]),
                                [b * t, this.dModel]);
      return tf.reshape(tf.matMul(merged, this.wo.read() as tf.Tensor2D),
                        [b, t, this.dModel]);
    });
  }

  override computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return inputShape;
  }

  override getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), dModel: this.dModel, heads: this.heads,
             seed: this.seed };
  }
}
tf.serialization.registerClass(MultiHeadSelfAttention);

/** First-position (aggregate token) readout. */
class TakeFirst extends tf.layers.Layer {
  static className = "TakeFirst";

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      return tf.squeeze(tf.slice(x, [0, 0, 0], [-1, 1, -1]), [1]);
    });
  }

  override computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return [inputShape[0], inputShape[2]];
  }
}
tf.serialization.registerClass(TakeFirst);

function mlpHead(x: tf.SymbolicTensor, widths: number[], dropout: number,
                 seed: number): tf.SymbolicTensor {
  let h = x;
  widths.forEach((units, i) => {
    h = tf.layers.dense({
      units, activation: "relu", name: `head_dense_${i}`,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + i }),
    }).apply(h) as tf.SymbolicTensor;
    h = tf.layers.dropout({ rate: dropout, seed: seed + 100 + i,
                            name: `head_dropout_${i}` })
      .apply(h) as tf.SymbolicTensor;
  });
  return tf.layers.dense({
    units: 1, name: "head_logit",
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 200 }),
  }).apply(h) as tf.SymbolicTensor;
}

/** Two parallel bucket-id streams -> embeddings -> BiLSTM stack ->
 * attention pooling -> MLP logit. Streams: 1 (single modality) or 2. */
export function buildLstm(seqLen: number, nStreams: number,
                          params: LstmParams, seed: number): tf.LayersModel {
  const inputs: tf.SymbolicTensor[] = [];
  const embedded: tf.SymbolicTensor[] = [];
  for (let s = 0; s < nStreams; s++) {
    const input = tf.input({ shape: [seqLen], dtype: "int32",
                             name: `stream_${s}` });
    inputs.push(input);
    // bucket ids are shifted by one so 0 stays the padding id
    embedded.push(new OneHotEmbedding({
      vocabSize: 52, outputDim: params.embedDim, stddev: 0.05,
      seed: seed + s, name: `embed_${s}`,
    }).apply(input) as tf.SymbolicTensor);
  }
  let x = embedded.length > 1
    ? tf.layers.concatenate({ name: "stream_concat" })
      .apply(embedded) as tf.SymbolicTensor
    : embedded[0];
  for (let layer = 0; layer < params.layers; layer++) {
    const lstm = tf.layers.lstm({
      units: params.hiddenUnits, returnSequences: true,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 10 + layer }),
      // glorot here too: the default orthogonal init is prohibitively slow
      // on the pure-JS backend at these sizes
      recurrentInitializer: tf.initializers.glorotUniform({ seed: seed + 20 + layer }),
      name: `lstm_${layer}`,
    });
    x = (params.bidirectional
      ? tf.layers.bidirectional({ layer: lstm as any, mergeMode: "concat",
                                  name: `bilstm_${layer}` }).apply(x)
      : lstm.apply(x)) as tf.SymbolicTensor;
    x = tf.layers.dropout({ rate: params.dropout, seed: seed + 30 + layer,
                            name: `lstm_dropout_${layer}` })
      .apply(x) as tf.SymbolicTensor;
  }
  x = new AttentionPool({ attentionDim: params.attentionDim, seed: seed + 40,
                          name: "attention_pool" })
    .apply(x) as tf.SymbolicTensor;
  const logit = mlpHead(x, params.headWidths, params.dropout, seed + 50);
  return tf.model({ inputs, outputs: logit, name: "lstm_attacker" });
}

/** Token ids -> embedding + positions -> pre-LN transformer blocks ->
 * aggregate-token readout -> MLP logit. Vocabulary is the 100 bucket
 * tokens plus [CLS]/[SEP] plus one padding id. */
export function buildTransformer(seqLen: number, params: TransformerParams,
                                 seed: number): tf.LayersModel {
  const padId = VOCAB_SIZE; // 102
  const input = tf.input({ shape: [seqLen], dtype: "int32", name: "tokens" });
  let x = new OneHotEmbedding({
    vocabSize: padId + 1, outputDim: params.dModel, stddev: 0.02,
    seed, name: "token_embed",
  }).apply(input) as tf.SymbolicTensor;
  x = new PositionalEmbedding({ maxLen: seqLen, dModel: params.dModel,
                                seed: seed + 1, name: "positions" })
    .apply(x) as tf.SymbolicTensor;
  for (let blk = 0; blk < params.blocks; blk++) {
    const ln1 = tf.layers.layerNormalization({ name: `blk${blk}_ln1` })
      .apply(x) as tf.SymbolicTensor;
    const att = new MultiHeadSelfAttention({
      dModel: params.dModel, heads: params.heads, seed: seed + 10 * (blk + 1),
      name: `blk${blk}_attention`,
    }).apply(ln1) as tf.SymbolicTensor;
    const attDrop = tf.layers.dropout({
      rate: params.dropout, seed: seed + 10 * (blk + 1) + 5,
      name: `blk${blk}_att_dropout`,
    }).apply(att) as tf.SymbolicTensor;
    x = tf.layers.add({ name: `blk${blk}_res1` })
      .apply([x, attDrop]) as tf.SymbolicTensor;

    const ln2 = tf.layers.layerNormalization({ name: `blk${blk}_ln2` })
      .apply(x) as tf.SymbolicTensor;
    let ffn = tf.layers.dense({
      units: params.ffnDim, activation: "relu", name: `blk${blk}_ffn1`,
      kernelInitializer: tf.initializers.glorotUniform(
        { seed: seed + 10 * (blk + 1) + 6 }),
    }).apply(ln2) as tf.SymbolicTensor;
    ffn = tf.layers.dense({
      units: params.dModel, name: `blk${blk}_ffn2`,
      kernelInitializer: tf.initializers.glorotUniform(
        { seed: seed + 10 * (blk + 1) + 7 }),
    }).apply(ffn) as tf.SymbolicTensor;
    const ffnDrop = tf.layers.dropout({
      rate: params.dropout, seed: seed + 10 * (blk + 1) + 8,
      name: `blk${blk}_ffn_dropout`,
    }).apply(ffn) as tf.SymbolicTensor;
    x = tf.layers.add({ name: `blk${blk}_res2` })
      .apply([x, ffnDrop]) as tf.SymbolicTensor;
  }
  x = tf.layers.layerNormalization({ name: "final_ln" })
    .apply(x) as tf.SymbolicTensor;
  const pooled = new TakeFirst({}).apply(x) as tf.SymbolicTensor;
  const logit = mlpHead(pooled, params.headWidths, params.dropout, seed + 60);
  return tf.model({ inputs: input, outputs: logit, name: "transformer_attacker" });
}

export const PAD_TOKEN_ID = VOCAB_SIZE;
