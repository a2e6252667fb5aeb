/**
 * Training losses over density and segmentation tensors.
 *
 * These mirror the fgcount evaluator's scalar loss definitions so the two
 * implementations can be checked against each other on shared tensors:
 *
 * - class MSE: per attribute, per known class, mean squared error over the
 *   unmasked pixels (masked pixels leave both the sum and the pixel count),
 *   summed over attributes and classes,
 * - total-count MSE: per attribute, MSE between the per-pixel channel sums
 *   of each side; never masked,
 * - soft cross entropy: per attribute, against (class0, class1, background)
 *   targets built from the ground-truth fractions, averaged over unmasked
 *   pixels; log arguments are clamped below at 1e-12.
 *
 * All tensors here are per image and channels-first, matching the tensor
 * files: densities are (C, H, W), masks (H, W) with 1 = excluded.
 */

import * as tf from "@tensorflow/tfjs";

import { ATTRIBUTES, Attribute, N_CLASSES } from "./channels.js";

export const LOG_CLAMP = 1e-12;

export type PerAttribute<T> = Record<Attribute, T>;

/** Ground-truth segmentation targets per attribute: (3, H, W) rows
 * (class0 fraction, class1 fraction, background indicator). */
export function segTargets(
  segKnown: tf.Tensor3D,
  background: tf.Tensor2D,
): tf.Tensor3D {
  return tf.tidy(() => {
    const bg = background.greater(0).cast("float32");
    const fg = tf.onesLike(bg).sub(bg);
    const t0 = segKnown.slice([0, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]).mul(fg);
    const t1 = segKnown.slice([1, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]).mul(fg);
    return tf.stack([t0, t1, bg]) as tf.Tensor3D;
  });
}

function keepAndCount(
  mask: tf.Tensor2D | null,
  shape: [number, number],
): { keep: tf.Tensor2D; nPx: number } {
  if (mask === null) {
    return { keep: tf.ones(shape), nPx: shape[0] * shape[1] };
  }
  const keep = tf.tidy(() => mask.equal(0).cast("float32") as tf.Tensor2D);
  const nPx = keep.sum().dataSync()[0];
  return { keep, nPx };
}

/**
 * Per-class density MSE, summed over attributes and known classes.
 *
 * pred[attr] holds the two known-class grids (2, H, W); gt[attr] may carry
 * a third (unknown) channel, which is ignored. Masked pixels contribute
 * zero gradient: they are multiplied out of the sum and excluded from the
 * pixel count.
 */
export function lossClassMse(
  pred: PerAttribute<tf.Tensor3D>,
  gt: PerAttribute<tf.Tensor3D>,
  masks: PerAttribute<tf.Tensor2D> | null = null,
): tf.Scalar {
  return tf.tidy(() => {
    let total = tf.scalar(0);
    for (const attr of ATTRIBUTES) {
      const p = pred[attr];
      const g = gt[attr];
      const [, h, w] = p.shape;
      if (g.shape[1] !== h || g.shape[2] !== w) {
        throw new Error(`${attr}: grid dims differ: ${p.shape} vs ${g.shape}`);
      }
      const { keep, nPx } = keepAndCount(masks ? masks[attr] : null, [h, w]);
      if (nPx === 0) {
        continue;
      }
      for (let c = 0; c < N_CLASSES; c++) {
        const pc = p.slice([c, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]);
        const gc = g.slice([c, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]);
        const err = pc.sub(gc).square().mul(keep).sum();
        total = total.add(err.div(nPx));
      }
    }
    return total as tf.Scalar;
  });
}

/**
 * Total-count MSE per attribute, summed over attributes; never masked.
 *
 * Each side is collapsed to a per-pixel channel sum first, so ground truth
 * should include its unknown channel (its per-attribute sum then equals
 * the overall density).
 */
export function lossTotalCount(
  pred: PerAttribute<tf.Tensor3D>,
  gt: PerAttribute<tf.Tensor3D>,
): tf.Scalar {
  return tf.tidy(() => {
    let total = tf.scalar(0);
    for (const attr of ATTRIBUTES) {
      const p = pred[attr].sum(0);
      const g = gt[attr].sum(0);
      if (p.shape[0] !== g.shape[0] || p.shape[1] !== g.shape[1]) {
        throw new Error(`${attr}: grid dims differ: ${p.shape} vs ${g.shape}`);
      }
      total = total.add(p.sub(g).square().mean());
    }
    return total as tf.Scalar;
  });
}

/**
 * Soft cross entropy against (class0, class1, background) targets.
 *
 * pred[attr] is a (3, H, W) distribution per pixel whose channels must sum
 * to 1 within normalizationAtol. targets[attr] comes from segTargets. Per
 * attribute the loss averages over unmasked pixels.
 */
export function lossSoftXent(
  pred: PerAttribute<tf.Tensor3D>,
  targets: PerAttribute<tf.Tensor3D>,
  masks: PerAttribute<tf.Tensor2D> | null = null,
  normalizationAtol = 1e-5,
): tf.Scalar {
  return tf.tidy(() => {
    let total = tf.scalar(0);
    for (const attr of ATTRIBUTES) {
      const p = pred[attr];
      const t = targets[attr];
      if (p.shape[0] !== 3) {
        throw new Error(`${attr}: predicted segmentation needs 3 channels, got ${p.shape[0]}`);
      }
      const [, h, w] = p.shape;
      if (t.shape[1] !== h || t.shape[2] !== w) {
        throw new Error(`${attr}: grid dims differ: ${p.shape} vs ${t.shape}`);
      }
      const colErr = p.sum(0).sub(1).abs().max().dataSync()[0];
      if (colErr > normalizationAtol) {
        throw new Error(`${attr}: predicted segmentation channels do not sum to 1`);
      }
      const logp = p.maximum(LOG_CLAMP).log();
      const px = t.mul(logp).sum(0).neg();
      const { keep, nPx } = keepAndCount(masks ? masks[attr] : null, [h, w]);
      if (nPx === 0) {
        continue;
      }
      total = total.add(px.mul(keep).sum().div(nPx));
    }
    return total as tf.Scalar;
  });
}

export interface LossWeights {
  wc: number;
  wt: number;
  ws: number;
}

export interface LossParts {
  classMse: tf.Scalar;
  totalCount: tf.Scalar;
  softXent: tf.Scalar;
}

/** Weighted sum w_c * L^c + w_t * L^t + w_s * L^s. */
export function combinedLoss(parts: LossParts, weights: LossWeights): tf.Scalar {
  return tf.tidy(
    () =>
      parts.classMse
        .mul(weights.wc)
        .add(parts.totalCount.mul(weights.wt))
        .add(parts.softXent.mul(weights.ws)) as tf.Scalar,
  );
}
