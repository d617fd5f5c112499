/** Shared training machinery: tensor batching, the early-stopped training
 * loop (optionally with a separate head learning rate), and per-trial
 * orchestration producing scored sets. */
import * as tf from "@tensorflow/tfjs";
import { encode, streamBuckets, type EncoderManifest } from "./encoding.js";
import type { Trace } from "./jsonl.js";
import {
  buildLstm,
  buildTransformer,
  LSTM_DEFAULTS,
  PAD_TOKEN_ID,
  TRANSFORMER_DEFAULTS,
  type LstmParams,
  type TransformerParams,
} from "./models.js";
import { Rng } from "./rng.js";
import { splitDataset } from "./split.js";
import type { Scored } from "./metrics.js";
import type { TrialOutcome } from "./report.js";

export interface Batch {
  xs: tf.Tensor[];
  ys: tf.Tensor2D;
  size: number;
}

export interface EncodedSet {
  streams: Int32Array[][]; // per input stream, per sample
  labels: number[];
  seqLen: number;
}

function padTo(ids: number[], len: number, padValue: number): Int32Array {
  const out = new Int32Array(len).fill(padValue);
  for (let i = 0; i < Math.min(ids.length, len); i++) out[i] = ids[i];
  return out;
}

/** 95th-percentile (nearest-rank) of sequence lengths, capped. */
export function p95Length(lengths: number[], cap: number): number {
  const sorted = lengths.slice().sort((a, b) => a - b);
  const rank = Math.max(1, Math.ceil(0.95 * sorted.length - 1e-9));
  return Math.max(1, Math.min(cap, sorted[rank - 1]));
}

export function encodeForLstm(traces: Trace[], encoder: EncoderManifest,
                              modality: "size" | "time" | "both",
                              seqLen: number): EncodedSet {
  const nStreams = modality === "both" ? 2 : 1;
  const streams: Int32Array[][] = Array.from({ length: nStreams }, () => []);
  const labels: number[] = [];
  for (const trace of traces) {
    const { size, time } = streamBuckets(trace, encoder, seqLen);
    // shift bucket ids by one; 0 is the padding id
    const shift = (b: number[]) => b.map((v) => v + 1);
    if (modality === "both") {
      streams[0].push(padTo(shift(size), seqLen, 0));
      streams[1].push(padTo(shift(time), seqLen, 0));
    } else {
      streams[0].push(padTo(shift(modality === "size" ? size : time), seqLen, 0));
    }
    labels.push(trace.label === "target" ? 1 : 0);
  }
  return { streams, labels, seqLen };
}

export function encodeForTransformer(traces: Trace[], encoder: EncoderManifest,
                                     seqLen: number): EncodedSet {
  const streams: Int32Array[][] = [[]];
  const labels: number[] = [];
  for (const trace of traces) {
    streams[0].push(padTo(encode(trace, encoder), seqLen, PAD_TOKEN_ID));
    labels.push(trace.label === "target" ? 1 : 0);
  }
  return { streams, labels, seqLen };
}

function makeBatch(set: EncodedSet, indices: number[]): Batch {
  const xs = set.streams.map((stream) => {
    const flat = new Int32Array(indices.length * set.seqLen);
    indices.forEach((idx, row) => flat.set(stream[idx], row * set.seqLen));
    return tf.tensor2d(flat, [indices.length, set.seqLen], "int32");
  });
  const ys = tf.tensor2d(indices.map((i) => [set.labels[i]]), undefined,
                         "float32");
  return { xs, ys, size: indices.length };
}

function disposeBatch(batch: Batch): void {
  batch.xs.forEach((t) => t.dispose());
  batch.ys.dispose();
}

export interface LoopOptions {
  batchSize: number;
  maxEpochs: number;
  patience: number;
  learningRate: number;
  headLrMultiplier?: number;
  seed: number;
  verbose?: boolean;
}

function valLoss(model: tf.LayersModel, set: EncodedSet,
                 batchSize: number): number {
  let total = 0;
  for (let start = 0; start < set.labels.length; start += batchSize) {
    const idx = Array.from(
      { length: Math.min(batchSize, set.labels.length - start) },
      (_, i) => start + i);
    const batch = makeBatch(set, idx);
    const loss = tf.tidy(() => {
      const logits = model.apply(
        batch.xs.length === 1 ? batch.xs[0] : batch.xs,
        { training: false }) as tf.Tensor;
      return tf.losses.sigmoidCrossEntropy(batch.ys, logits, undefined,
                                           undefined,
                                           tf.Reduction.SUM) as tf.Scalar;
    });
    total += loss.dataSync()[0];
    loss.dispose();
    disposeBatch(batch);
  }
  return total / set.labels.length;
}

/** Minimize binary cross-entropy with early stopping on validation loss;
 * restores the best-validation weights before returning. */
export function trainLoop(model: tf.LayersModel, train: EncodedSet,
                          val: EncodedSet, opts: LoopOptions): number {
  const headVars = model.trainableWeights
    .filter((w) => w.name.startsWith("head_"))
    .map((w) => w.name);
  const useSplitLr = (opts.headLrMultiplier ?? 1) !== 1 && headVars.length > 0;
  const bodyOpt = tf.train.adam(opts.learningRate);
  const headOpt = tf.train.adam(opts.learningRate * (opts.headLrMultiplier ?? 1));

  let best = valLoss(model, val, opts.batchSize);
  let bestWeights = model.getWeights().map((w) => w.clone());
  let stall = 0;
  let epochs = 0;
  const order = Array.from({ length: train.labels.length }, (_, i) => i);

  for (let epoch = 0; epoch < opts.maxEpochs; epoch++) {
    epochs = epoch + 1;
    const shuffled = new Rng(opts.seed + 1000 * epoch + 17).shuffle(order);
    for (let start = 0; start < shuffled.length; start += opts.batchSize) {
      const batch = makeBatch(train, shuffled.slice(start, start + opts.batchSize));
      const lossFn = () => {
        const logits = model.apply(
          batch.xs.length === 1 ? batch.xs[0] : batch.xs,
          { training: true }) as tf.Tensor;
        return tf.losses.sigmoidCrossEntropy(batch.ys, logits) as tf.Scalar;
      };
      const { grads, value } = tf.variableGrads(lossFn);
      value.dispose();
      const named = Object.entries(grads)
        .map(([name, tensor]) => ({ name, tensor }));
      if (useSplitLr) {
        const body = named.filter((g) => !headVars.includes(g.name));
        const head = named.filter((g) => headVars.includes(g.name));
        if (body.length) bodyOpt.applyGradients(body);
        if (head.length) headOpt.applyGradients(head);
      } else {
        bodyOpt.applyGradients(named);
      }
      Object.values(grads).forEach((g) => g.dispose());
      disposeBatch(batch);
    }
    const loss = valLoss(model, val, opts.batchSize);
    if (opts.verbose) {
      console.error(`epoch ${epoch + 1}: val_loss=${loss.toFixed(5)}`);
    }
    if (loss < best) {
      best = loss;
      bestWeights.forEach((w) => w.dispose());
      bestWeights = model.getWeights().map((w) => w.clone());
      stall = 0;
    } else {
      stall += 1;
      if (stall >= opts.patience) break;
    }
  }
  model.setWeights(bestWeights);
  bestWeights.forEach((w) => w.dispose());
  bodyOpt.dispose();
  headOpt.dispose();
  return epochs;
}

export function predict(model: tf.LayersModel, set: EncodedSet,
                        batchSize: number): number[] {
  const out: number[] = [];
  for (let start = 0; start < set.labels.length; start += batchSize) {
    const idx = Array.from(
      { length: Math.min(batchSize, set.labels.length - start) },
      (_, i) => start + i);
    const batch = makeBatch(set, idx);
    const probs = tf.tidy(() => tf.sigmoid(model.apply(
      batch.xs.length === 1 ? batch.xs[0] : batch.xs,
      { training: false }) as tf.Tensor));
    out.push(...Array.from(probs.dataSync()));
    probs.dispose();
    disposeBatch(batch);
  }
  return out;
}

export interface TrialConfig {
  architecture: "lstm" | "transformer";
  modality: "size" | "time" | "both";
  holdoutFraction: number;
  valFraction: number;
  maxLenCap?: number;
  lstm?: Partial<LstmParams>;
  transformer?: Partial<TransformerParams>;
  verbose?: boolean;
}

/** One split/train/score round; positives are held-out target prompts,
 * negatives the validation noise (mirrors the primary harness). */
export function runTrial(traces: Trace[], encoder: EncoderManifest,
                         seed: number, config: TrialConfig):
    TrialOutcome & { model: tf.LayersModel } {
  const split = splitDataset(traces, config.holdoutFraction,
                             config.valFraction, seed);
  const valNoise = split.val.filter((t) => t.label === "noise");
  if (!valNoise.length) throw new Error("validation split has no noise traffic");

  let scored: Scored;
  let nEpochs: number;
  let model: tf.LayersModel;
  if (config.architecture === "lstm") {
    const params = { ...LSTM_DEFAULTS, ...config.lstm };
    const cap = Math.min(config.maxLenCap ?? 255, 255);
    const seqLen = p95Length(split.train.map((t) => t.events.length), cap);
    const enc = (ts: Trace[]) =>
      encodeForLstm(ts, encoder, config.modality, seqLen);
    const nStreams = config.modality === "both" ? 2 : 1;
    model = buildLstm(seqLen, nStreams, params, seed);
    nEpochs = trainLoop(model, enc(split.train), enc(split.val), {
      batchSize: params.batchSize, maxEpochs: params.maxEpochs,
      patience: params.patience, learningRate: params.learningRate,
      seed, verbose: config.verbose,
    });
    scored = {
      positives: predict(model, enc(split.test), params.batchSize),
      negatives: predict(model, enc(valNoise), params.batchSize),
    };
  } else {
    const params = { ...TRANSFORMER_DEFAULTS, ...config.transformer };
    const layoutCap = encoder.modality === "both"
      ? 2 * encoder.max_len + 3 : encoder.max_len + 2;
    const trainTokenLens = split.train.map(
      (t) => encode(t, encoder).length);
    const seqLen = Math.min(config.maxLenCap ?? layoutCap, layoutCap,
                            p95Length(trainTokenLens, layoutCap));
    const enc = (ts: Trace[]) => encodeForTransformer(ts, encoder, seqLen);
    model = buildTransformer(seqLen, params, seed);
    nEpochs = trainLoop(model, enc(split.train), enc(split.val), {
      batchSize: params.batchSize, maxEpochs: params.maxEpochs,
      patience: params.patience, learningRate: params.learningRate,
      headLrMultiplier: params.headLrMultiplier, seed,
      verbose: config.verbose,
    });
    scored = {
      positives: predict(model, enc(split.test), params.batchSize),
      negatives: predict(model, enc(valNoise), params.batchSize),
    };
  }
  return { seed, scored, nEpochs, model };
}
