/** CLI: train the sequence attackers over primary-format files.
 *
 *   node dist/cli.js train-lstm        --data d.jsonl --encoder e.json \
 *       --modality both --trials 3 --base-seed 0 --out-dir out/
 *   node dist/cli.js train-transformer --data d.jsonl --encoder e.json ...
 *
 * Writes report.json (primary-schema evaluation report) and one
 * checkpoint-<seed>.json per trial into the output directory.
 */
import { mkdirSync } from "node:fs";
import { join } from "node:path";
import { initBackend } from "./backend.js";
import { loadEncoder } from "./encoding.js";
import { readDataset } from "./jsonl.js";
import { buildReport, writeReport } from "./report.js";
import { saveCheckpoint } from "./checkpoint.js";
import { runTrial, type TrialConfig } from "./train.js";
import { LSTM_DEFAULTS, TRANSFORMER_DEFAULTS } from "./models.js";

interface Args {
  [key: string]: string;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const [command, ...rest] = argv;
  const args: Args = {};
  for (let i = 0; i < rest.length; i += 2) {
    if (!rest[i].startsWith("--") || i + 1 >= rest.length) {
      throw new Error(`malformed arguments near ${rest[i]}`);
    }
    args[rest[i].slice(2)] = rest[i + 1];
  }
  return { command, args };
}

function required(args: Args, key: string): string {
  const v = args[key];
  if (v === undefined) throw new Error(`missing required --${key}`);
  return v;
}

export async function main(argv: string[]): Promise<number> {
  const { command, args } = parseArgs(argv);
  if (command !== "train-lstm" && command !== "train-transformer") {
    console.error("usage: cli.js train-lstm|train-transformer --data ... " +
                  "--encoder ... --out-dir ...");
    return 2;
  }
  console.error(`backend: ${await initBackend()}`);
  const architecture = command === "train-lstm" ? "lstm" : "transformer";
  const traces = readDataset(required(args, "data"));
  const encoder = loadEncoder(required(args, "encoder"));
  const outDir = required(args, "out-dir");
  mkdirSync(outDir, { recursive: true });

  const modality = (args["modality"] ?? encoder.modality) as
    "size" | "time" | "both";
  const trials = parseInt(args["trials"] ?? "1", 10);
  const baseSeed = parseInt(args["base-seed"] ?? "0", 10);
  const ratio = parseFloat(args["ratio"] ?? "10000");
  const maxEpochs = args["max-epochs"] ? parseInt(args["max-epochs"], 10)
    : undefined;
  const maxLenCap = args["max-len"] ? parseInt(args["max-len"], 10) : undefined;

  const config: TrialConfig = {
    architecture,
    modality,
    holdoutFraction: parseFloat(args["holdout"] ?? "0.2"),
    valFraction: parseFloat(args["val"] ?? "0.05"),
    maxLenCap,
    lstm: maxEpochs ? { maxEpochs } : {},
    transformer: maxEpochs ? { maxEpochs } : {},
    verbose: args["verbose"] === "1",
  };

  const outcomes = [];
  for (let i = 0; i < trials; i++) {
    const seed = baseSeed + i;
    const outcome = runTrial(traces, encoder, seed, config);
    saveCheckpoint(outcome.model, join(outDir, `checkpoint-${seed}.json`));
    outcome.model.dispose();
    outcomes.push(outcome);
    console.error(`trial ${i}: epochs=${outcome.nEpochs}`);
  }
  const params = architecture === "lstm"
    ? { ...LSTM_DEFAULTS, ...config.lstm }
    : { ...TRANSFORMER_DEFAULTS, ...config.transformer };
  const report = buildReport(outcomes, {
    ratio, modality, architecture, params: params as Record<string, unknown>,
  });
  writeReport(report, join(outDir, "report.json"));
  console.log(JSON.stringify({ median_auprc: report.medians.auprc },
                             null, 0));
  return 0;
}

const isMain = process.argv[1]?.endsWith("cli.js");
if (isMain) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
