/** Shared fixture loading for the test suite. */

import * as path from "node:path";
import { fileURLToPath } from "node:url";

import * as tf from "@tensorflow/tfjs";

import { ATTRIBUTES, densityChannelName, maskChannelName, segChannelName } from "../src/channels.js";
import { StoredTensor, readStack } from "../src/fgct.js";
import { PerAttribute, segTargets } from "../src/losses.js";

export const FIXTURES = path.join(
  path.dirname(fileURLToPath(import.meta.url)),
  "..",
  "fixtures",
);

export interface Reference {
  seed: number;
  grid: { height: number; width: number };
  images: string[];
  losses: Record<
    string,
    {
      class_mse_masked: number;
      class_mse_unmasked: number;
      total_count: number;
      soft_xent_masked: number;
      soft_xent_unmasked: number;
    }
  >;
  file_sha256: Record<string, string>;
}

export async function loadReference(): Promise<Reference> {
  const fs = await import("node:fs");
  return JSON.parse(fs.readFileSync(path.join(FIXTURES, "reference.json"), "utf-8"));
}

export function toTensor2d(stored: StoredTensor): tf.Tensor2D {
  const [h, w] = stored.shape;
  return tf.tensor2d(stored.data, [h, w]);
}

export function stackChannels(parts: StoredTensor[]): tf.Tensor3D {
  const grids = parts.map(toTensor2d);
  const out = tf.stack(grids) as tf.Tensor3D;
  grids.forEach((g) => g.dispose());
  return out;
}

/** One fixture image's tensors in the layout the losses consume. */
export interface FixtureImage {
  predDensity: PerAttribute<tf.Tensor3D>; // (2, H, W)
  gtDensity: PerAttribute<tf.Tensor3D>; // (3, H, W)
  predSeg: PerAttribute<tf.Tensor3D>; // (3, H, W)
  targets: PerAttribute<tf.Tensor3D>; // (3, H, W)
  masks: PerAttribute<tf.Tensor2D>;
}

export function loadFixtureImage(imageId: string): FixtureImage {
  const gt = readStack(path.join(FIXTURES, "gt", imageId)).channels;
  const predDens = readStack(path.join(FIXTURES, "pred_density", imageId)).channels;
  const predSegCh = readStack(path.join(FIXTURES, "pred_seg", imageId)).channels;

  const predDensity = {} as PerAttribute<tf.Tensor3D>;
  const gtDensity = {} as PerAttribute<tf.Tensor3D>;
  const predSeg = {} as PerAttribute<tf.Tensor3D>;
  const targets = {} as PerAttribute<tf.Tensor3D>;
  const masks = {} as PerAttribute<tf.Tensor2D>;
  const background = toTensor2d(gt["background"]);
  for (const attr of ATTRIBUTES) {
    predDensity[attr] = stackChannels([0, 1].map((c) => predDens[densityChannelName(attr, c)]));
    gtDensity[attr] = stackChannels([0, 1, 2].map((c) => gt[densityChannelName(attr, c)]));
    predSeg[attr] = stackChannels([0, 1, 2].map((k) => predSegCh[`pseg_${attr}_${k}`]));
    const segKnown = stackChannels([0, 1].map((c) => gt[segChannelName(attr, c)]));
    targets[attr] = segTargets(segKnown, background);
    segKnown.dispose();
    masks[attr] = toTensor2d(gt[maskChannelName(attr)]);
  }
  background.dispose();
  return { predDensity, gtDensity, predSeg, targets, masks };
}

/** Uniform per-attribute record built by one factory call per attribute. */
export function perAttribute<T>(make: (attr: (typeof ATTRIBUTES)[number]) => T): PerAttribute<T> {
  const out = {} as PerAttribute<T>;
  for (const attr of ATTRIBUTES) {
    out[attr] = make(attr);
  }
  return out;
}
