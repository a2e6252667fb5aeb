/**
 * End-to-end experiments against a ground-truth directory produced by
 * `fgcount genmaps`.
 *
 * The harness reads the tensor stacks as training data (the network input
 * is the ground-truth overall density, standing in for imagery, which the
 * annotation pipeline never carries), trains the baseline and multitask
 * variants on identical data, exports their predictions as tensor stacks,
 * and asks the fgcount command line evaluator for the final report, so
 * the scoring implementation is never duplicated here.
 */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";

import {
  ATTRIBUTES,
  densityChannelName,
  maskChannelName,
  segChannelName,
} from "./channels.js";
import { StoredTensor, listStacks, readStack, writeStack } from "./fgct.js";
import { PerAttribute, segTargets } from "./losses.js";
import {
  CountingModel,
  DEFAULT_SPEC,
  Mode,
  ModelSpec,
  buildModel,
  fuseDensitySegmentation,
} from "./model.js";
import { StepLosses, TrainConfig, TrainSample, trainModel } from "./train.js";

function toTensor2d(stored: StoredTensor): tf.Tensor2D {
  const [h, w] = stored.shape;
  return tf.tensor2d(stored.data, [h, w]);
}

function stack3(parts: StoredTensor[]): tf.Tensor3D {
  const tensors = parts.map(toTensor2d);
  const out = tf.stack(tensors) as tf.Tensor3D;
  tensors.forEach((t) => t.dispose());
  return out;
}

/** Load every ground-truth stack under gtDir as a training sample. */
export function loadTrainingData(gtDir: string): TrainSample[] {
  const stacks = listStacks(gtDir);
  if (stacks.size === 0) {
    throw new Error(`no stacks found under ${gtDir}`);
  }
  const samples: TrainSample[] = [];
  for (const [imageId, dir] of stacks) {
    const { channels } = readStack(dir);
    const overall = channels["overall"];
    const [h, w] = overall.shape;
    const gtDensity = {} as PerAttribute<tf.Tensor3D>;
    const targets = {} as PerAttribute<tf.Tensor3D>;
    const masks = {} as PerAttribute<tf.Tensor2D>;
    const background = toTensor2d(channels["background"]);
    for (const attr of ATTRIBUTES) {
      gtDensity[attr] = stack3([0, 1, 2].map((c) => channels[densityChannelName(attr, c)]));
      const segKnown = stack3([0, 1].map((c) => channels[segChannelName(attr, c)]));
      targets[attr] = segTargets(segKnown, background);
      segKnown.dispose();
      masks[attr] = toTensor2d(channels[maskChannelName(attr)]);
    }
    background.dispose();
    samples.push({
      imageId,
      input: tf.tensor4d(overall.data, [1, h, w, 1]),
      gtDensity,
      segTargets: targets,
      masks,
    });
  }
  return samples;
}

export function disposeSamples(samples: TrainSample[]): void {
  for (const s of samples) {
    s.input.dispose();
    for (const attr of ATTRIBUTES) {
      s.gtDensity[attr].dispose();
      s.segTargets[attr].dispose();
      s.masks[attr].dispose();
    }
  }
}

function stored(t: tf.Tensor2D): StoredTensor {
  const [h, w] = t.shape;
  return { shape: [h, w], data: t.dataSync() as Float32Array };
}

/**
 * Export one prediction stack per sample. Multitask stacks carry the
 * overall density plus the six fused known-class channels; baseline
 * stacks carry only the six class channels, exercising the evaluator's
 * overall-count fallback.
 */
export function exportPredictions(
  model: CountingModel,
  samples: TrainSample[],
  outDir: string,
): void {
  for (const sample of samples) {
    tf.tidy(() => {
      const channels: Record<string, StoredTensor> = {};
      let perClass: PerAttribute<tf.Tensor3D>;
      if (model.mode === "multitask") {
        const out = model.forwardMultitask(sample.input);
        channels["overall"] = stored(out.density);
        perClass = fuseDensitySegmentation(out.density, out.seg);
      } else {
        perClass = model.forwardBaseline(sample.input).classDensity;
      }
      for (const attr of ATTRIBUTES) {
        for (const c of [0, 1]) {
          const grid = perClass[attr]
            .slice([c, 0, 0], [1, -1, -1])
            .squeeze<tf.Tensor2D>([0]);
          channels[densityChannelName(attr, c)] = stored(grid);
        }
      }
      writeStack(path.join(outDir, sample.imageId), channels, {
        image_id: sample.imageId,
        generator: "train_harness",
        mode: model.mode,
      });
    });
  }
}

export interface EvalReportJson {
  n_images: number;
  mae: number;
  cmmae: number;
  mmae: Record<string, Record<string, number>>;
  per_image_mae: Record<string, number>;
}

/** Score predictions against ground truth via the fgcount command line. */
export function evaluateWithCli(
  predDir: string,
  gtDir: string,
  reportPath: string,
): EvalReportJson {
  const bin = process.env.FGCOUNT_BIN ?? "fgcount";
  const result = spawnSync(
    bin,
    ["evaluate", "--pred", predDir, "--gt", gtDir, "--report", reportPath],
    { encoding: "utf-8" },
  );
  if (result.error) {
    throw new Error(`failed to run ${bin}: ${result.error.message}`);
  }
  if (result.status !== 0) {
    throw new Error(`${bin} evaluate exited ${result.status}: ${result.stderr}`);
  }
  return JSON.parse(fs.readFileSync(reportPath, "utf-8"));
}

export interface ExperimentConfig {
  /** Directory of ground-truth stacks from `fgcount genmaps`. */
  dataDir: string;
  outDir: string;
  train: TrainConfig;
  spec?: ModelSpec;
  modes?: Mode[];
}

export interface VariantResult {
  mode: Mode;
  history: StepLosses[];
  initialReport: EvalReportJson;
  finalReport: EvalReportJson;
  predDir: string;
}

/**
 * Train each requested variant on identical data; export untrained and
 * trained predictions and score both through the command line evaluator.
 */
export function runExperiment(config: ExperimentConfig): VariantResult[] {
  const spec = config.spec ?? { ...DEFAULT_SPEC, seed: config.train.seed };
  const modes = config.modes ?? (["baseline", "multitask"] as Mode[]);
  fs.mkdirSync(config.outDir, { recursive: true });
  const samples = loadTrainingData(config.dataDir);
  const results: VariantResult[] = [];
  try {
    for (const mode of modes) {
      const model = buildModel(spec, mode);
      const initDir = path.join(config.outDir, `pred_${mode}_init`);
      exportPredictions(model, samples, initDir);
      const initialReport = evaluateWithCli(
        initDir,
        config.dataDir,
        path.join(config.outDir, `report_${mode}_init.json`),
      );
      const history = trainModel(model, samples, config.train);
      const predDir = path.join(config.outDir, `pred_${mode}`);
      exportPredictions(model, samples, predDir);
      const finalReport = evaluateWithCli(
        predDir,
        config.dataDir,
        path.join(config.outDir, `report_${mode}.json`),
      );
      fs.writeFileSync(
        path.join(config.outDir, `history_${mode}.json`),
        JSON.stringify(history, null, 2),
      );
      results.push({ mode, history, initialReport, finalReport, predDir });
    }
  } finally {
    disposeSamples(samples);
  }
  return results;
}

/**
 * Run the mask/multitask toggle grid and write one CSV row per setting
 * (columns: variant, loss_mask, multi_task, MAE, CMMAE).
 */
export function runAblation(config: ExperimentConfig): string {
  fs.mkdirSync(config.outDir, { recursive: true });
  const rows = ["variant,loss_mask,multi_task,MAE,CMMAE"];
  for (const mode of ["baseline", "multitask"] as Mode[]) {
    for (const maskLosses of [false, true]) {
      const variant = `${mode}${maskLosses ? "+mask" : ""}`;
      const result = runExperiment({
        ...config,
        outDir: path.join(config.outDir, variant.replace("+", "_")),
        train: { ...config.train, maskLosses },
        modes: [mode],
      })[0];
      const { mae, cmmae } = result.finalReport;
      rows.push(
        `${variant},${maskLosses ? 1 : 0},${mode === "multitask" ? 1 : 0},${mae},${cmmae}`,
      );
    }
  }
  const csvPath = path.join(config.outDir, "ablation.csv");
  fs.writeFileSync(csvPath, rows.join("\n") + "\n");
  return csvPath;
}
