/** Evaluation report JSON in the primary component's schema, so reports
 * from either attacker family aggregate together. */
import { createHash } from "node:crypto";
import { writeFileSync } from "node:fs";
import { median, precisionAtRecallProjected, auprc, type Scored } from "./metrics.js";

export const DEFAULT_RECALLS = [0.05, 0.1, 0.2, 0.5];

export interface TrialOutcome {
  seed: number;
  scored: Scored;
  nEpochs: number;
}

export interface ReportOptions {
  ratio: number;
  recalls?: number[];
  modality: string;
  architecture: "lstm" | "transformer";
  params: Record<string, unknown>;
}

function recallKey(r: number): string {
  return `${r}`.replace(/0+$/, "").replace(/\.$/, "");
}

export function buildReport(trials: TrialOutcome[], opts: ReportOptions) {
  const recalls = opts.recalls ?? DEFAULT_RECALLS;
  const trialDocs = trials.map((t) => {
    const pr: Record<string, number> = {};
    for (const r of recalls) {
      pr[recallKey(r)] = precisionAtRecallProjected(t.scored, r, opts.ratio);
    }
    const nPos = t.scored.positives.length;
    const nNeg = t.scored.negatives.length;
    return {
      seed: t.seed,
      auprc: auprc(t.scored),
      precision_at_recall: pr,
      prevalence: nPos / (nPos + nNeg),
      n_pos: nPos,
      n_neg: nNeg,
      n_epochs: t.nEpochs,
    };
  });
  const medianPr: Record<string, number> = {};
  for (const r of recalls) {
    medianPr[recallKey(r)] = median(
      trialDocs.map((t) => t.precision_at_recall[recallKey(r)]));
  }
  const params = { architecture: opts.architecture, ...opts.params };
  const digest = createHash("sha256")
    .update(JSON.stringify(params, Object.keys(params).sort()))
    .digest("hex").slice(0, 12);
  return {
    version: 1,
    ratio: opts.ratio,
    recalls,
    modality: opts.modality,
    trial_seeds: trialDocs.map((t) => t.seed),
    trials: trialDocs,
    medians: {
      auprc: median(trialDocs.map((t) => t.auprc)),
      precision_at_recall: medianPr,
      prevalence: median(trialDocs.map((t) => t.prevalence)),
    },
    params,
    params_digest: digest,
    mitigation: null,
  };
}

export function writeReport(report: ReturnType<typeof buildReport>,
                            path: string): void {
  writeFileSync(path, JSON.stringify(report, null, 2) + "\n");
}
