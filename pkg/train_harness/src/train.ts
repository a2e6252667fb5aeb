/**
 * Training loop: weighted loss assembly and gradient steps.
 *
 * One sample is one image's FGCT-derived tensors. The combined objective
 * is w_c * classMse + w_t * totalCount + w_s * softXent; with masking
 * enabled the class and segmentation terms skip masked pixels (and those
 * pixels receive exactly zero gradient), while the total-count term never
 * masks anything.
 */

import * as tf from "@tensorflow/tfjs";

import { Attribute } from "./channels.js";
import {
  LossWeights,
  PerAttribute,
  combinedLoss,
  lossClassMse,
  lossSoftXent,
  lossTotalCount,
} from "./losses.js";
import { CountingModel, fuseDensitySegmentation } from "./model.js";

export interface TrainConfig {
  seed: number;
  epochs: number;
  batchSize: number;
  learningRate: number;
  weights: LossWeights;
  maskLosses: boolean;
}

export const DEFAULT_TRAIN_CONFIG: TrainConfig = {
  seed: 0,
  epochs: 30,
  batchSize: 4,
  learningRate: 0.05,
  weights: { wc: 1, wt: 1, ws: 1 },
  maskLosses: true,
};

export function validateTrainConfig(config: TrainConfig): void {
  const { wc, wt, ws } = config.weights;
  if (wc < 0 || wt < 0 || ws < 0) {
    throw new Error("loss weights must be nonnegative");
  }
  if (!Number.isInteger(config.epochs) || config.epochs < 0) {
    throw new Error("epochs must be a nonnegative integer");
  }
  if (!Number.isInteger(config.batchSize) || config.batchSize < 1) {
    throw new Error("batchSize must be a positive integer");
  }
  if (!(config.learningRate > 0)) {
    throw new Error("learningRate must be positive");
  }
}

/** One image's tensors, as produced from a ground-truth stack. */
export interface TrainSample {
  imageId: string;
  /** (1, H, W, 1) network input. */
  input: tf.Tensor4D;
  /** Per attribute (3, H, W): class0, class1, unknown. */
  gtDensity: PerAttribute<tf.Tensor3D>;
  /** Per attribute (3, H, W) soft cross-entropy targets. */
  segTargets: PerAttribute<tf.Tensor3D>;
  /** Per attribute (H, W), 1 = excluded from masked losses. */
  masks: PerAttribute<tf.Tensor2D>;
}

export interface StepLosses {
  loss: number;
  classMse: number;
  totalCount: number;
  softXent: number;
}

function sampleLoss(
  model: CountingModel,
  sample: TrainSample,
  config: TrainConfig,
): { total: tf.Scalar; parts: StepLosses } {
  const masks = config.maskLosses ? sample.masks : null;
  let predDensity: PerAttribute<tf.Tensor3D>;
  let softXent: tf.Scalar;
  if (model.mode === "multitask") {
    const out = model.forwardMultitask(sample.input);
    predDensity = fuseDensitySegmentation(out.density, out.seg);
    softXent = lossSoftXent(out.seg, sample.segTargets, masks);
  } else {
    predDensity = model.forwardBaseline(sample.input).classDensity;
    softXent = tf.scalar(0);
  }
  const classMse = lossClassMse(predDensity, sample.gtDensity, masks);
  const totalCount = lossTotalCount(predDensity, sample.gtDensity);
  const total = combinedLoss({ classMse, totalCount, softXent }, config.weights);
  return {
    total,
    parts: {
      loss: total.dataSync()[0],
      classMse: classMse.dataSync()[0],
      totalCount: totalCount.dataSync()[0],
      softXent: softXent.dataSync()[0],
    },
  };
}

/**
 * One gradient step over a batch of samples (mean of per-image losses).
 * Returns the batch's scalar losses.
 */
export function trainingStep(
  model: CountingModel,
  batch: TrainSample[],
  config: TrainConfig,
  optimizer: tf.Optimizer,
): StepLosses {
  validateTrainConfig(config);
  if (batch.length === 0) {
    throw new Error("empty batch");
  }
  const collected: StepLosses[] = [];
  const { value, grads } = tf.variableGrads(() => {
    return tf.tidy(() => {
      let total = tf.scalar(0);
      for (const sample of batch) {
        const { total: sampleTotal, parts } = sampleLoss(model, sample, config);
        collected.push(parts);
        total = total.add(sampleTotal);
      }
      return total.div(batch.length) as tf.Scalar;
    });
  }, model.trainableWeights);
  optimizer.applyGradients(grads);
  const mean = (k: keyof StepLosses) =>
    collected.reduce((a, p) => a + p[k], 0) / collected.length;
  const losses: StepLosses = {
    loss: value.dataSync()[0],
    classMse: mean("classMse"),
    totalCount: mean("totalCount"),
    softXent: mean("softXent"),
  };
  value.dispose();
  Object.values(grads).forEach((g) => g.dispose());
  return losses;
}

/** Train for config.epochs passes over the samples; returns per-step losses. */
export function trainModel(
  model: CountingModel,
  samples: TrainSample[],
  config: TrainConfig,
): StepLosses[] {
  validateTrainConfig(config);
  const optimizer = tf.train.adam(config.learningRate);
  const history: StepLosses[] = [];
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    for (let start = 0; start < samples.length; start += config.batchSize) {
      const batch = samples.slice(start, start + config.batchSize);
      history.push(trainingStep(model, batch, config, optimizer));
    }
  }
  optimizer.dispose();
  return history;
}
