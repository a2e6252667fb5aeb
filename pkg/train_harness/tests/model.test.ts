import * as tf from "@tensorflow/tfjs";
import { beforeAll, describe, expect, it } from "vitest";

import { ATTRIBUTES } from "../src/channels.js";
import {
  BaselineOutput,
  CountingModel,
  DEFAULT_SPEC,
  MultitaskOutput,
  buildModel,
  fuseDensitySegmentation,
  perAttributeTotals,
  validateSpec,
} from "../src/model.js";

function randomInput(h: number, w: number, seed: number): tf.Tensor4D {
  return tf.randomUniform([1, h, w, 1], 0, 1, "float32", seed);
}

describe("model spec validation", () => {
  it("accepts the default spec", () => {
    expect(() => validateSpec(DEFAULT_SPEC)).not.toThrow();
  });

  it("rejects an empty encoder", () => {
    expect(() => validateSpec({ encoderFilters: [], seed: 0 })).toThrow(/empty/);
  });

  it("rejects non-positive or fractional filter counts", () => {
    expect(() => validateSpec({ encoderFilters: [8, 0], seed: 0 })).toThrow(/positive/);
    expect(() => validateSpec({ encoderFilters: [-4], seed: 0 })).toThrow(/positive/);
    expect(() => validateSpec({ encoderFilters: [2.5], seed: 0 })).toThrow(/positive/);
  });

  it("rejects an unknown mode", () => {
    expect(() => buildModel(DEFAULT_SPEC, "other" as never)).toThrow(/unknown mode/);
  });
});

describe("multitask forward pass", () => {
  let model: CountingModel;
  let out: MultitaskOutput;

  beforeAll(() => {
    model = buildModel(DEFAULT_SPEC, "multitask");
    out = model.forwardMultitask(randomInput(16, 20, 5));
  });

  it("produces a nonnegative density map of the input size", () => {
    expect(out.density.shape).toEqual([16, 20]);
    expect(out.density.min().dataSync()[0]).toBeGreaterThanOrEqual(0);
  });

  it("produces per-attribute segmentations normalized per pixel", () => {
    for (const attr of ATTRIBUTES) {
      const seg = out.seg[attr];
      expect(seg.shape).toEqual([3, 16, 20]);
      const colsumErr = seg.sum(0).sub(1).abs().max().dataSync()[0];
      expect(colsumErr).toBeLessThanOrEqual(1e-5);
      expect(seg.min().dataSync()[0]).toBeGreaterThanOrEqual(0);
      expect(seg.max().dataSync()[0]).toBeLessThanOrEqual(1);
    }
  });

  it("handles other input sizes with the same weights", () => {
    const small = model.forwardMultitask(randomInput(8, 10, 6));
    expect(small.density.shape).toEqual([8, 10]);
    expect(small.seg.age.shape).toEqual([3, 8, 10]);
  });

  it("is deterministic for a fixed seed", () => {
    const again = buildModel(DEFAULT_SPEC, "multitask").forwardMultitask(randomInput(16, 20, 5));
    expect(Array.from(again.density.dataSync())).toEqual(Array.from(out.density.dataSync()));
  });

  it("refuses the baseline forward", () => {
    expect(() => model.forwardBaseline(randomInput(4, 4, 7))).toThrow(/on a multitask model/);
  });

  it("exposes one kernel and one bias per layer", () => {
    // Two encoder blocks plus four heads (density and three segmentations).
    expect(model.trainableWeights).toHaveLength(12);
  });
});

describe("baseline forward pass", () => {
  let model: CountingModel;
  let out: BaselineOutput;

  beforeAll(() => {
    model = buildModel(DEFAULT_SPEC, "baseline");
    out = model.forwardBaseline(randomInput(16, 20, 5));
  });

  it("produces two nonnegative class-density channels per attribute", () => {
    for (const attr of ATTRIBUTES) {
      expect(out.classDensity[attr].shape).toEqual([2, 16, 20]);
      expect(out.classDensity[attr].min().dataSync()[0]).toBeGreaterThanOrEqual(0);
    }
  });

  it("refuses the multitask forward", () => {
    expect(() => model.forwardMultitask(randomInput(4, 4, 7))).toThrow(/on a baseline model/);
  });

  it("exposes one kernel and one bias per layer", () => {
    // Two encoder blocks plus the single six-channel head.
    expect(model.trainableWeights).toHaveLength(6);
  });
});

describe("density-segmentation fusion", () => {
  it("multiplies the shared density by each class fraction", () => {
    const density = tf.tensor2d([[2, 4]], [1, 2]);
    const seg = {} as Parameters<typeof fuseDensitySegmentation>[1];
    for (const attr of ATTRIBUTES) {
      seg[attr] = tf.tensor3d([[[0.5, 0.25]], [[0.25, 0.5]], [[0.25, 0.25]]], [3, 1, 2]);
    }
    const fused = fuseDensitySegmentation(density, seg);
    for (const attr of ATTRIBUTES) {
      expect(fused[attr].shape).toEqual([2, 1, 2]);
      expect(Array.from(fused[attr].dataSync())).toEqual([1, 1, 0.5, 2]);
    }
  });
});

describe("per-attribute total counts on random inputs", () => {
  const spread = (totals: Record<string, number>) => {
    const values = ATTRIBUTES.map((a) => totals[a]);
    return Math.max(...values) - Math.min(...values);
  };

  it("agree across attributes for the multitask layout, disagree for the baseline", () => {
    const multitask = buildModel(DEFAULT_SPEC, "multitask");
    const baseline = buildModel(DEFAULT_SPEC, "baseline");
    let worstMultitask = 0;
    let smallestBaseline = Infinity;
    for (const seed of [11, 12, 13, 14]) {
      const input = randomInput(24, 32, seed);
      const multitaskSpread = spread(perAttributeTotals(multitask.forwardMultitask(input)));
      const baselineSpread = spread(perAttributeTotals(baseline.forwardBaseline(input)));
      expect(multitaskSpread).toBeLessThanOrEqual(1e-4);
      expect(baselineSpread).toBeGreaterThan(1e-2);
      worstMultitask = Math.max(worstMultitask, multitaskSpread);
      smallestBaseline = Math.min(smallestBaseline, baselineSpread);
    }
    console.log(
      `[secondary criterion: fusion consistency] PASS multitask spread ${worstMultitask.toExponential(2)} <= 1e-4, baseline spread ${smallestBaseline.toFixed(3)} is measurable`,
    );
  });

  it("matches the sum of fused channels plus the background share", () => {
    const model = buildModel(DEFAULT_SPEC, "multitask");
    const out = model.forwardMultitask(randomInput(12, 12, 21));
    const totals = perAttributeTotals(out);
    const fused = fuseDensitySegmentation(out.density, out.seg);
    for (const attr of ATTRIBUTES) {
      const background = out.seg[attr].slice([2, 0, 0], [1, -1, -1]).squeeze<tf.Tensor2D>([0]);
      const rebuilt =
        fused[attr].sum().dataSync()[0] + out.density.mul(background).sum().dataSync()[0];
      expect(Math.abs(rebuilt - totals[attr])).toBeLessThanOrEqual(1e-3);
    }
  });
});
