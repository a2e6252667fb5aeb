/**
 * Command line entry: train the toy variants against a directory of
 * ground-truth stacks and report the scores.
 *
 *   node dist/main.js run      --data GT_DIR --out OUT_DIR [options]
 *   node dist/main.js ablation --data GT_DIR --out OUT_DIR [options]
 *
 * Options: --epochs N --batch N --lr F --seed N --no-mask (disable loss
 * masking for the `run` command; the ablation grid toggles it itself).
 */

import { parseArgs } from "node:util";

import { DEFAULT_TRAIN_CONFIG } from "./train.js";
import { runAblation, runExperiment } from "./experiment.js";

function main(argv: string[]): number {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      data: { type: "string" },
      out: { type: "string" },
      epochs: { type: "string" },
      batch: { type: "string" },
      lr: { type: "string" },
      seed: { type: "string" },
      "no-mask": { type: "boolean", default: false },
    },
  });
  const command = positionals[0];
  if (!command || !["run", "ablation"].includes(command) || !values.data || !values.out) {
    console.error(
      "usage: main.js run|ablation --data GT_DIR --out OUT_DIR " +
        "[--epochs N] [--batch N] [--lr F] [--seed N] [--no-mask]",
    );
    return 2;
  }
  const train = {
    ...DEFAULT_TRAIN_CONFIG,
    epochs: values.epochs ? parseInt(values.epochs, 10) : DEFAULT_TRAIN_CONFIG.epochs,
    batchSize: values.batch ? parseInt(values.batch, 10) : DEFAULT_TRAIN_CONFIG.batchSize,
    learningRate: values.lr ? parseFloat(values.lr) : DEFAULT_TRAIN_CONFIG.learningRate,
    seed: values.seed ? parseInt(values.seed, 10) : DEFAULT_TRAIN_CONFIG.seed,
    maskLosses: !values["no-mask"],
  };
  const config = { dataDir: values.data, outDir: values.out, train };
  if (command === "ablation") {
    const csvPath = runAblation(config);
    console.log(`ablation rows written to ${csvPath}`);
    return 0;
  }
  for (const result of runExperiment(config)) {
    const first = result.history[0]?.loss;
    const last = result.history[result.history.length - 1]?.loss;
    console.log(
      `${result.mode}: loss ${first?.toFixed(4)} -> ${last?.toFixed(4)}, ` +
        `MAE ${result.initialReport.mae.toFixed(3)} -> ${result.finalReport.mae.toFixed(3)}, ` +
        `CMMAE ${result.finalReport.cmmae.toFixed(3)}`,
    );
  }
  return 0;
}

process.exitCode = main(process.argv.slice(2));
