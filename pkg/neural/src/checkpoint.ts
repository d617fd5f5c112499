/** Opaque weight checkpoints (names + float32 payloads, base64 packed). */
import { readFileSync, writeFileSync } from "node:fs";
import * as tf from "@tensorflow/tfjs";

export function saveCheckpoint(model: tf.LayersModel, path: string): void {
  const entries = model.weights.map((w, i) => {
    const tensor = model.getWeights()[i];
    const data = tensor.dataSync() as Float32Array;
    return {
      name: w.name,
      shape: tensor.shape,
      data: Buffer.from(data.buffer, data.byteOffset, data.byteLength)
        .toString("base64"),
    };
  });
  writeFileSync(path, JSON.stringify({ version: 1, weights: entries }));
}

export function loadCheckpoint(model: tf.LayersModel, path: string): void {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  if (doc.version !== 1) {
    throw new Error(`unsupported checkpoint version: ${doc.version}`);
  }
  const byName = new Map<string, tf.Tensor>(
    doc.weights.map((w: { name: string; shape: number[]; data: string }) => {
      const buf = Buffer.from(w.data, "base64");
      const arr = new Float32Array(buf.buffer, buf.byteOffset,
                                   buf.byteLength / 4);
      return [w.name, tf.tensor(Array.from(arr), w.shape)];
    }));
  const ordered = model.weights.map((w) => {
    const t = byName.get(w.name);
    if (!t) throw new Error(`checkpoint missing weight ${w.name}`);
    return t;
  });
  model.setWeights(ordered);
  ordered.forEach((t) => t.dispose());
}
