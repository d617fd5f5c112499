/** Prompt-grouped split mirroring the primary semantics: a fifth of the
 * target prompt groups goes wholly to test; every remaining trace (leftover
 * target plus all noise) splits per trace into train/val. Scoring uses the
 * held-out target traces as positives and the validation noise as
 * negatives. */
import { Rng } from "./rng.js";
import type { Trace } from "./jsonl.js";

export interface Split {
  train: Trace[];
  val: Trace[];
  test: Trace[];
  seed: number;
}

export function splitDataset(traces: Trace[], holdoutFraction: number,
                             valFraction: number, seed: number): Split {
  if (!(holdoutFraction > 0 && holdoutFraction < 1) ||
      !(valFraction > 0 && valFraction < 1)) {
    throw new Error("fractions must be in (0, 1)");
  }
  const targetPids = [...new Set(
    traces.filter((t) => t.label === "target").map((t) => t.prompt_id))].sort();
  if (targetPids.length < 2) {
    throw new Error("need >= 2 distinct target prompt_ids");
  }
  const rng = new Rng(seed);
  const nHold = Math.max(1, Math.ceil(holdoutFraction * targetPids.length - 1e-9));
  const held = new Set(rng.shuffle(targetPids).slice(0, nHold));

  const test = traces.filter((t) => t.label === "target" && held.has(t.prompt_id));
  const testIds = new Set(test.map((t) => t.id));
  const remaining = traces.filter((t) => !testIds.has(t.id));
  const nVal = Math.floor(valFraction * remaining.length + 0.5);
  const order = rng.shuffle(remaining.map((_, i) => i));
  const valIdx = new Set(order.slice(0, nVal));
  const val = remaining.filter((_, i) => valIdx.has(i));
  const train = remaining.filter((_, i) => !valIdx.has(i));
  return { train, val, test, seed };
}
