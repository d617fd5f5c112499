/** Scoring metrics matching the primary component's definitions. */

export interface Scored {
  positives: number[];
  negatives: number[];
}

/** Step-wise average precision with tied scores as a single threshold. */
export function auprc(scored: Scored): number {
  const { positives, negatives } = scored;
  if (!positives.length || !negatives.length) {
    throw new Error("scored set needs at least one positive and one negative");
  }
  const entries = [
    ...positives.map((s) => ({ s, pos: 1 })),
    ...negatives.map((s) => ({ s, pos: 0 })),
  ].sort((a, b) => b.s - a.s);
  let ap = 0;
  let prevRecall = 0;
  let tp = 0;
  let total = 0;
  for (let i = 0; i < entries.length; i++) {
    tp += entries[i].pos;
    total += 1;
    const isGroupEnd = i === entries.length - 1 || entries[i + 1].s !== entries[i].s;
    if (!isGroupEnd) continue;
    const recall = tp / positives.length;
    ap += (recall - prevRecall) * (tp / total);
    prevRecall = recall;
  }
  return ap;
}

/** Precision at the smallest threshold attaining `recall`, projected to a
 * noise:target ratio R by reweighting the empirical negatives. */
export function precisionAtRecallProjected(scored: Scored, recall: number,
                                           ratio: number): number {
  if (!(recall > 0 && recall <= 1)) throw new Error("recall must be in (0, 1]");
  if (ratio < 1) throw new Error("ratio must be >= 1");
  const pos = scored.positives.slice().sort((a, b) => b - a);
  const k = Math.max(1, Math.ceil(recall * pos.length - 1e-9));
  const thr = pos[k - 1];
  const attained = scored.positives.filter((s) => s >= thr).length / pos.length;
  const f = scored.negatives.filter((s) => s >= thr).length /
    scored.negatives.length;
  return attained / (attained + f * ratio);
}

export function median(values: number[]): number {
  const v = values.slice().sort((a, b) => a - b);
  const mid = v.length >> 1;
  return v.length % 2 ? v[mid] : (v[mid - 1] + v[mid]) / 2;
}
