/** Bucket-token encoding, bit-compatible with the primary encoder manifest.
 *
 * A value's bucket is the count of fitted boundaries strictly below it
 * (first index i with bounds[i] >= x), so boundary ties resolve to the
 * lower bucket and out-of-range values clamp to buckets 0/49. Token ids:
 * [CLS]=0, [SEP]=1, size bucket b -> 2+b, time bucket b -> 52+b.
 */
import { readFileSync } from "node:fs";
import { gaps, sizes, type Trace } from "./jsonl.js";

export const N_BUCKETS = 50;
export const CLS_ID = 0;
export const SEP_ID = 1;
export const SIZE_TOKEN_BASE = 2;
export const TIME_TOKEN_BASE = 2 + N_BUCKETS;
export const VOCAB_SIZE = 2 + 2 * N_BUCKETS;

export type Modality = "size" | "time" | "both";

export interface EncoderManifest {
  version: number;
  layout: "both" | "single";
  modality: Modality;
  max_len: number;
  n_buckets: number;
  size_bounds: number[];
  time_bounds: number[];
}

export function loadEncoder(path: string): EncoderManifest {
  const doc = JSON.parse(readFileSync(path, "utf-8")) as EncoderManifest;
  if (doc.version !== 1) {
    throw new Error(`unsupported encoder manifest version: ${doc.version}`);
  }
  if (doc.size_bounds.length !== N_BUCKETS - 1 ||
      doc.time_bounds.length !== N_BUCKETS - 1) {
    throw new Error("encoder manifest has wrong boundary count");
  }
  return doc;
}

/** First index with bounds[i] >= x (numpy searchsorted side="left"). */
export function bucketIndex(bounds: number[], x: number): number {
  let lo = 0;
  let hi = bounds.length;
  while (lo < hi) {
    const mid = (lo + hi) >> 1;
    if (bounds[mid] < x) lo = mid + 1;
    else hi = mid;
  }
  return lo;
}

export function encode(trace: Trace, encoder: EncoderManifest,
                       maxLen?: number): number[] {
  const cap = maxLen ?? encoder.max_len;
  if (cap < 1) throw new Error("max_len must be >= 1");
  const sizeTokens = (limit: number) =>
    sizes(trace).slice(0, limit)
      .map((v) => SIZE_TOKEN_BASE + bucketIndex(encoder.size_bounds, v));
  const timeTokens = (limit: number) =>
    gaps(trace).slice(0, limit)
      .map((v) => TIME_TOKEN_BASE + bucketIndex(encoder.time_bounds, v));
  if (encoder.modality === "both") {
    return [CLS_ID, ...sizeTokens(cap), SEP_ID, ...timeTokens(cap), SEP_ID];
  }
  const body = encoder.modality === "size" ? sizeTokens(cap) : timeTokens(cap);
  return [CLS_ID, ...body, SEP_ID];
}

/** Per-stream aligned bucket ids for recurrent models (no sentinels). */
export function streamBuckets(trace: Trace, encoder: EncoderManifest,
                              maxLen: number): { size: number[]; time: number[] } {
  return {
    size: sizes(trace).slice(0, maxLen)
      .map((v) => bucketIndex(encoder.size_bounds, v)),
    time: gaps(trace).slice(0, maxLen)
      .map((v) => bucketIndex(encoder.time_bounds, v)),
  };
}
