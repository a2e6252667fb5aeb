import { createHash } from "node:crypto";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { describe, expect, it } from "vitest";

import {
  FormatError,
  decodeTensor,
  encodeTensor,
  listStacks,
  readStack,
  readTensor,
  writeStack,
  writeTensor,
} from "../src/fgct.js";
import { FIXTURES, loadReference } from "./helpers.js";

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "fgct-"));
}

describe("tensor file encoding", () => {
  it("roundtrips shapes and values exactly", () => {
    const cases = [
      { shape: [4], data: Float32Array.from([1, -2.5, 3e-7, 4096.25]) },
      { shape: [2, 3], data: Float32Array.from([0, 1, 2, 3, 4, 5]) },
      { shape: [2, 2, 2], data: Float32Array.from([8, 7, 6, 5, 4, 3, 2, 1]) },
    ];
    for (const tensor of cases) {
      const back = decodeTensor(encodeTensor(tensor));
      expect(back.shape).toEqual(tensor.shape);
      expect(Array.from(back.data)).toEqual(Array.from(tensor.data));
    }
  });

  it("writes files the pipeline's generator wrote, byte for byte", async () => {
    // Re-encoding a tensor read from a fixture file must reproduce the
    // file exactly: the format has one canonical encoding.
    const ref = await loadReference();
    const entries = Object.entries(ref.file_sha256);
    expect(entries.length).toBeGreaterThan(20);
    for (const [rel, sha] of entries) {
      const raw = fs.readFileSync(path.join(FIXTURES, rel));
      expect(createHash("sha256").update(raw).digest("hex")).toBe(sha);
      const encoded = encodeTensor(decodeTensor(raw, rel));
      expect(createHash("sha256").update(encoded).digest("hex")).toBe(sha);
    }
  });

  it("rejects malformed buffers", () => {
    const good = encodeTensor({ shape: [2, 2], data: Float32Array.from([1, 2, 3, 4]) });
    const badMagic = Buffer.from(good);
    badMagic.write("NOPE", 0, "ascii");
    expect(() => decodeTensor(badMagic)).toThrow(FormatError);
    expect(() => decodeTensor(badMagic)).toThrow(/magic/);

    const badVersion = Buffer.from(good);
    badVersion.writeUInt16LE(9, 4);
    expect(() => decodeTensor(badVersion)).toThrow(/version/);

    const badDtype = Buffer.from(good);
    badDtype.writeUInt8(7, 6);
    expect(() => decodeTensor(badDtype)).toThrow(/dtype/);

    expect(() => decodeTensor(good.subarray(0, 5))).toThrow(/truncated header/);
    expect(() => decodeTensor(good.subarray(0, 10))).toThrow(/truncated dims/);
    expect(() => decodeTensor(good.subarray(0, good.length - 2))).toThrow(/truncated payload/);
    expect(() => decodeTensor(Buffer.concat([good, Buffer.from([0])]))).toThrow(/trailing/);
  });

  it("rejects shape and dimension errors on encode", () => {
    expect(() => encodeTensor({ shape: [], data: new Float32Array(0) })).toThrow(/ndim/);
    expect(() => encodeTensor({ shape: [3], data: new Float32Array(2) })).toThrow(/match/);
  });

  it("reads and writes through the filesystem", () => {
    const dir = tmpdir();
    const tensor = { shape: [3, 2], data: Float32Array.from([1, 2, 3, 4, 5, 6]) };
    writeTensor(path.join(dir, "t.fgct"), tensor);
    expect(readTensor(path.join(dir, "t.fgct"))).toEqual(tensor);
  });
});

describe("stack directories", () => {
  it("reads the stacks the pipeline generated", () => {
    const stacks = listStacks(path.join(FIXTURES, "gt"));
    expect([...stacks.keys()]).toEqual(["img_00000", "img_00001"]);
    const { channels, meta } = readStack(stacks.get("img_00000")!);
    expect(meta.image_id).toBe("img_00000");
    expect(Object.keys(channels)).toHaveLength(20);
    expect(channels["overall"].shape).toEqual([24, 32]);
  });

  it("roundtrips stacks it wrote itself", () => {
    const dir = tmpdir();
    const channels = {
      overall: { shape: [2, 2], data: Float32Array.from([1, 0, 0, 1]) },
      extra: { shape: [2, 2], data: Float32Array.from([0.5, 0.5, 0.5, 0.5]) },
    };
    writeStack(path.join(dir, "img_x"), channels, { image_id: "img_x" });
    const stacks = listStacks(dir);
    expect([...stacks.keys()]).toEqual(["img_x"]);
    const back = readStack(stacks.get("img_x")!);
    expect(back.meta.channels).toEqual(["extra", "overall"]);
    expect(back.channels).toEqual(channels);
  });

  it("ignores directories without a sidecar and missing roots", () => {
    const dir = tmpdir();
    fs.mkdirSync(path.join(dir, "incomplete"));
    expect(listStacks(dir).size).toBe(0);
    expect(listStacks(path.join(dir, "missing")).size).toBe(0);
    expect(() => readStack(path.join(dir, "incomplete"))).toThrow(/sidecar/);
  });
});
