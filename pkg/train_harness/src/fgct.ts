/**
 * Reader and writer for the binary tensor files the fgcount pipeline
 * exchanges at every file boundary.
 *
 * Layout (all integers little-endian):
 *
 *     bytes 0-3   magic `FGCT`
 *     u16         version (= 1)
 *     u8          dtype code (1 = float32)
 *     u8          ndim
 *     ndim x u32  dims (2-D grids are [height, width])
 *     payload     row-major little-endian float32 values
 *
 * A per-image stack is a directory of channel files plus a `sidecar.json`
 * naming the channels; the sidecar is written last so its presence marks a
 * complete stack.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const MAGIC = "FGCT";
export const VERSION = 1;
export const DTYPE_FLOAT32 = 1;
export const SIDECAR_NAME = "sidecar.json";

const HEADER_SIZE = 8;

export class FormatError extends Error {}

/** A tensor as stored on disk: shape plus flat row-major values. */
export interface StoredTensor {
  shape: number[];
  data: Float32Array;
}

export function encodeTensor(tensor: StoredTensor): Buffer {
  const { shape, data } = tensor;
  if (shape.length < 1 || shape.length > 255) {
    throw new FormatError(`unsupported ndim ${shape.length}`);
  }
  const n = shape.reduce((a, b) => a * b, 1);
  if (n !== data.length) {
    throw new FormatError(`shape [${shape}] does not match ${data.length} values`);
  }
  const buf = Buffer.alloc(HEADER_SIZE + 4 * shape.length + 4 * n);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt16LE(VERSION, 4);
  buf.writeUInt8(DTYPE_FLOAT32, 6);
  buf.writeUInt8(shape.length, 7);
  shape.forEach((dim, i) => buf.writeUInt32LE(dim, HEADER_SIZE + 4 * i));
  const payload = HEADER_SIZE + 4 * shape.length;
  for (let i = 0; i < n; i++) {
    buf.writeFloatLE(data[i], payload + 4 * i);
  }
  return buf;
}

export function decodeTensor(buf: Buffer, label = "buffer"): StoredTensor {
  if (buf.length < HEADER_SIZE) {
    throw new FormatError(`truncated header in ${label}`);
  }
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new FormatError(`bad magic in ${label}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== VERSION) {
    throw new FormatError(`unsupported version ${version} in ${label}`);
  }
  const dtype = buf.readUInt8(6);
  if (dtype !== DTYPE_FLOAT32) {
    throw new FormatError(`unsupported dtype code ${dtype} in ${label}`);
  }
  const ndim = buf.readUInt8(7);
  if (buf.length < HEADER_SIZE + 4 * ndim) {
    throw new FormatError(`truncated dims in ${label}`);
  }
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) {
    shape.push(buf.readUInt32LE(HEADER_SIZE + 4 * i));
  }
  const n = shape.reduce((a, b) => a * b, 1);
  const payload = HEADER_SIZE + 4 * ndim;
  if (buf.length < payload + 4 * n) {
    throw new FormatError(`truncated payload in ${label}`);
  }
  if (buf.length > payload + 4 * n) {
    throw new FormatError(`trailing bytes after payload in ${label}`);
  }
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = buf.readFloatLE(payload + 4 * i);
  }
  return { shape, data };
}

export function writeTensor(filePath: string, tensor: StoredTensor): void {
  fs.writeFileSync(filePath, encodeTensor(tensor));
}

export function readTensor(filePath: string): StoredTensor {
  return decodeTensor(fs.readFileSync(filePath), filePath);
}

/** Write a stack directory: one tensor file per channel plus the sidecar. */
export function writeStack(
  imageDir: string,
  channels: Record<string, StoredTensor>,
  meta: Record<string, unknown>,
): void {
  fs.mkdirSync(imageDir, { recursive: true });
  const names = Object.keys(channels).sort();
  for (const name of names) {
    writeTensor(path.join(imageDir, `${name}.fgct`), channels[name]);
  }
  const sidecar = Object.fromEntries(
    Object.entries({ ...meta, channels: names }).sort(([a], [b]) =>
      a < b ? -1 : a > b ? 1 : 0,
    ),
  );
  const tmp = path.join(imageDir, SIDECAR_NAME + ".tmp");
  fs.writeFileSync(tmp, JSON.stringify(sidecar));
  fs.renameSync(tmp, path.join(imageDir, SIDECAR_NAME));
}

export interface Stack {
  channels: Record<string, StoredTensor>;
  meta: Record<string, unknown>;
}

/** Read a stack directory written by writeStack or by `fgcount genmaps`. */
export function readStack(imageDir: string): Stack {
  const sidecarPath = path.join(imageDir, SIDECAR_NAME);
  if (!fs.existsSync(sidecarPath)) {
    throw new FormatError(`no ${SIDECAR_NAME} in ${imageDir}`);
  }
  const meta = JSON.parse(fs.readFileSync(sidecarPath, "utf-8"));
  const channels: Record<string, StoredTensor> = {};
  for (const name of meta.channels ?? []) {
    channels[name] = readTensor(path.join(imageDir, `${name}.fgct`));
  }
  return { channels, meta };
}

/** Map image_id -> stack directory for every complete stack under root. */
export function listStacks(root: string): Map<string, string> {
  const out = new Map<string, string>();
  if (!fs.existsSync(root) || !fs.statSync(root).isDirectory()) {
    return out;
  }
  for (const entry of fs.readdirSync(root).sort()) {
    const dir = path.join(root, entry);
    const sidecarPath = path.join(dir, SIDECAR_NAME);
    if (fs.statSync(dir).isDirectory() && fs.existsSync(sidecarPath)) {
      const meta = JSON.parse(fs.readFileSync(sidecarPath, "utf-8"));
      out.set(meta.image_id ?? entry, dir);
    }
  }
  return out;
}
