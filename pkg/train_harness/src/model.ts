/**
 * Toy counting networks in the two head layouts under comparison.
 *
 * Both share a small convolutional encoder over a single input channel.
 * The multitask layout predicts one overall density map plus, per
 * attribute, a pixelwise-normalized 3-way segmentation (class0, class1,
 * background); per-class densities come from multiplying the shared
 * density by the class fractions, which makes total counts agree across
 * attributes by construction. The baseline layout predicts six per-class
 * density channels directly, so nothing ties its per-attribute totals
 * together.
 */

import * as tf from "@tensorflow/tfjs";

import { ATTRIBUTES, Attribute, N_CLASSES } from "./channels.js";
import { PerAttribute } from "./losses.js";

export type Mode = "baseline" | "multitask";

export interface ModelSpec {
  /** Filters per encoder conv block (3x3, relu). */
  encoderFilters: number[];
  seed: number;
}

export const DEFAULT_SPEC: ModelSpec = { encoderFilters: [8, 8], seed: 0 };

export function validateSpec(spec: ModelSpec): void {
  if (spec.encoderFilters.length === 0) {
    throw new Error("encoderFilters must not be empty");
  }
  for (const f of spec.encoderFilters) {
    if (!Number.isInteger(f) || f < 1) {
      throw new Error(`encoder filter counts must be positive integers, got ${f}`);
    }
  }
}

export interface MultitaskOutput {
  /** (H, W) nonnegative overall density. */
  density: tf.Tensor2D;
  /** Per attribute (3, H, W), channels summing to 1 per pixel. */
  seg: PerAttribute<tf.Tensor3D>;
}

export interface BaselineOutput {
  /** Per attribute (2, H, W) nonnegative class densities. */
  classDensity: PerAttribute<tf.Tensor3D>;
}

function toChannelsFirst(batched: tf.Tensor4D): tf.Tensor3D {
  // (1, H, W, C) -> (C, H, W)
  return batched.squeeze<tf.Tensor3D>([0]).transpose([2, 0, 1]);
}

export class CountingModel {
  readonly mode: Mode;
  readonly net: tf.LayersModel;

  constructor(mode: Mode, net: tf.LayersModel) {
    this.mode = mode;
    this.net = net;
  }

  get trainableWeights(): tf.Variable[] {
    return this.net.trainableWeights.map((w) => w.read() as tf.Variable);
  }

  private apply(input: tf.Tensor4D): tf.Tensor[] {
    const out = this.net.apply(input) as tf.Tensor | tf.Tensor[];
    return Array.isArray(out) ? out : [out];
  }

  /** Forward one (1, H, W, 1) input through a multitask network. */
  forwardMultitask(input: tf.Tensor4D): MultitaskOutput {
    if (this.mode !== "multitask") {
      throw new Error("forwardMultitask called on a baseline model");
    }
    return tf.tidy(() => {
      const [density, ...segs] = this.apply(input);
      const seg = {} as PerAttribute<tf.Tensor3D>;
      ATTRIBUTES.forEach((attr, i) => {
        seg[attr] = toChannelsFirst(segs[i] as tf.Tensor4D);
      });
      return {
        density: (density as tf.Tensor4D).squeeze<tf.Tensor2D>([0, 3]),
        seg,
      };
    });
  }

  /** Forward one (1, H, W, 1) input through a baseline network. */
  forwardBaseline(input: tf.Tensor4D): BaselineOutput {
    if (this.mode !== "baseline") {
      throw new Error("forwardBaseline called on a multitask model");
    }
    return tf.tidy(() => {
      const [stacked] = this.apply(input);
      const cf = toChannelsFirst(stacked as tf.Tensor4D); // (6, H, W)
      const classDensity = {} as PerAttribute<tf.Tensor3D>;
      ATTRIBUTES.forEach((attr, a) => {
        classDensity[attr] = cf.slice([a * N_CLASSES, 0, 0], [N_CLASSES, -1, -1]);
      });
      return { classDensity };
    });
  }
}

export function buildModel(spec: ModelSpec, mode: Mode): CountingModel {
  validateSpec(spec);
  if (mode !== "baseline" && mode !== "multitask") {
    throw new Error(`unknown mode ${mode}`);
  }
  const input = tf.input({ shape: [null, null, 1] });
  let x = input;
  spec.encoderFilters.forEach((filters, i) => {
    x = tf.layers
      .conv2d({
        filters,
        kernelSize: 3,
        padding: "same",
        activation: "relu",
        kernelInitializer: tf.initializers.glorotUniform({ seed: spec.seed + i }),
        name: `encoder_${i}`,
      })
      .apply(x) as tf.SymbolicTensor;
  });

  const head = (filters: number, activation: "softplus" | "softmax", name: string, seed: number) =>
    tf.layers
      .conv2d({
        filters,
        kernelSize: 1,
        padding: "same",
        activation,
        kernelInitializer: tf.initializers.glorotUniform({ seed }),
        name,
      })
      .apply(x) as tf.SymbolicTensor;

  const base = spec.seed + spec.encoderFilters.length;
  let outputs: tf.SymbolicTensor[];
  if (mode === "multitask") {
    outputs = [head(1, "softplus", "density", base)];
    ATTRIBUTES.forEach((attr, i) => {
      outputs.push(head(3, "softmax", `seg_${attr}`, base + 1 + i));
    });
  } else {
    outputs = [head(ATTRIBUTES.length * N_CLASSES, "softplus", "class_density", base)];
  }
  const net = tf.model({ inputs: input, outputs });
  return new CountingModel(mode, net);
}

/** Fused per-class densities: overall density times each class fraction. */
export function fuseDensitySegmentation(
  density: tf.Tensor2D,
  seg: PerAttribute<tf.Tensor3D>,
): PerAttribute<tf.Tensor3D> {
  return tf.tidy(() => {
    const out = {} as PerAttribute<tf.Tensor3D>;
    for (const attr of ATTRIBUTES) {
      const s0 = seg[attr].slice([0, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]);
      const s1 = seg[attr].slice([1, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]);
      out[attr] = tf.stack([density.mul(s0), density.mul(s1)]) as tf.Tensor3D;
    }
    return out;
  });
}

/**
 * Per-attribute total counts at inference.
 *
 * For a multitask output the total routes the shared density through that
 * attribute's own three fractions (class0 + class1 + background), so the
 * per-attribute results can only disagree by pixelwise normalization
 * error. For a baseline output the total sums the attribute's two class
 * channels, which nothing constrains to match across attributes.
 */
export function perAttributeTotals(
  output: MultitaskOutput | BaselineOutput,
): PerAttribute<number> {
  return tf.tidy(() => {
    const totals = {} as PerAttribute<number>;
    if ("density" in output) {
      for (const attr of ATTRIBUTES) {
        const fractions = output.seg[attr].sum(0); // (H, W), ~1 everywhere
        totals[attr] = output.density.mul(fractions).sum().dataSync()[0];
      }
    } else {
      for (const attr of ATTRIBUTES) {
        totals[attr] = output.classDensity[attr].sum().dataSync()[0];
      }
    }
    return totals;
  });
}
