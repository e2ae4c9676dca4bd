/** splatlang interchange formats (little-endian, magic-prefixed).
 *
 *  RID1: u32 H, u32 W, then H*W uint16 region ids (0 = unassigned).
 *  RFE1: u32 n, u32 D; per entry u16 region id, u32 frame index,
 *        u64 pixel count, D float32 values.
 *  PPM (P6) is read for input clips.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC_REGION_IDS = "RID1";
export const MAGIC_FEATURES = "RFE1";

export class FormatError extends Error {}

export function writeRegionIds(
  path: string,
  height: number,
  width: number,
  grid: Uint16Array,
): void {
  if (grid.length !== height * width) {
    throw new FormatError(
      `grid length ${grid.length} != ${height}x${width}`,
    );
  }
  const buf = Buffer.alloc(4 + 8 + grid.length * 2);
  buf.write(MAGIC_REGION_IDS, 0, "ascii");
  buf.writeUInt32LE(height, 4);
  buf.writeUInt32LE(width, 8);
  for (let i = 0; i < grid.length; i++) {
    buf.writeUInt16LE(grid[i], 12 + 2 * i);
  }
  writeFileSync(path, buf);
}

export function readRegionIds(path: string): {
  height: number;
  width: number;
  grid: Uint16Array;
} {
  const buf = readFileSync(path);
  if (buf.length < 4 || buf.subarray(0, 4).toString("ascii") !== MAGIC_REGION_IDS) {
    throw new FormatError(`${path}: bad magic`);
  }
  if (buf.length < 12) {
    throw new FormatError(`${path}: truncated header`);
  }
  const height = buf.readUInt32LE(4);
  const width = buf.readUInt32LE(8);
  const expected = 12 + height * width * 2;
  if (buf.length !== expected) {
    throw new FormatError(`${path}: payload length ${buf.length} != ${expected}`);
  }
  const grid = new Uint16Array(height * width);
  for (let i = 0; i < grid.length; i++) {
    grid[i] = buf.readUInt16LE(12 + 2 * i);
  }
  return { height, width, grid };
}

export interface FeatureEntry {
  regionId: number;
  frameIndex: number;
  pixelCount: number;
  vector: Float64Array;
}

export function writeRegionFeatures(
  path: string,
  featureDim: number,
  entries: FeatureEntry[],
): void {
  if (entries.length === 0) {
    throw new FormatError("refusing to write an empty feature table");
  }
  const rowBytes = 2 + 4 + 8 + featureDim * 4;
  const buf = Buffer.alloc(4 + 8 + entries.length * rowBytes);
  buf.write(MAGIC_FEATURES, 0, "ascii");
  buf.writeUInt32LE(entries.length, 4);
  buf.writeUInt32LE(featureDim, 8);
  let off = 12;
  for (const entry of entries) {
    if (entry.vector.length !== featureDim) {
      throw new FormatError(
        `vector dim ${entry.vector.length} != ${featureDim}`,
      );
    }
    if (entry.regionId < 0 || entry.regionId > 0xffff) {
      throw new FormatError(`region id ${entry.regionId} not a uint16`);
    }
    buf.writeUInt16LE(entry.regionId, off);
    buf.writeUInt32LE(entry.frameIndex, off + 2);
    buf.writeBigUInt64LE(BigInt(entry.pixelCount), off + 6);
    for (let d = 0; d < featureDim; d++) {
      buf.writeFloatLE(entry.vector[d], off + 14 + 4 * d);
    }
    off += rowBytes;
  }
  writeFileSync(path, buf);
}

export function readRegionFeatures(path: string): {
  featureDim: number;
  entries: FeatureEntry[];
} {
  const buf = readFileSync(path);
  if (buf.length < 4 || buf.subarray(0, 4).toString("ascii") !== MAGIC_FEATURES) {
    throw new FormatError(`${path}: bad magic`);
  }
  if (buf.length < 12) {
    throw new FormatError(`${path}: truncated header`);
  }
  const count = buf.readUInt32LE(4);
  const featureDim = buf.readUInt32LE(8);
  const rowBytes = 2 + 4 + 8 + featureDim * 4;
  if (buf.length !== 12 + count * rowBytes) {
    throw new FormatError(`${path}: payload length mismatch`);
  }
  const entries: FeatureEntry[] = [];
  let off = 12;
  for (let i = 0; i < count; i++) {
    const vector = new Float64Array(featureDim);
    for (let d = 0; d < featureDim; d++) {
      vector[d] = buf.readFloatLE(off + 14 + 4 * d);
    }
    entries.push({
      regionId: buf.readUInt16LE(off),
      frameIndex: buf.readUInt32LE(off + 2),
      pixelCount: Number(buf.readBigUInt64LE(off + 6)),
      vector,
    });
    off += rowBytes;
  }
  return { featureDim, entries };
}

/** Binary P6 PPM, maxval 255, values scaled to [0, 1]. */
export function readPpm(path: string): {
  width: number;
  height: number;
  pixels: Float64Array;
} {
  const buf = readFileSync(path);
  const fields: string[] = [];
  let pos = 0;
  while (fields.length < 4) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    fields.push(buf.subarray(start, pos).toString("ascii"));
  }
  pos++;
  if (fields[0] !== "P6") throw new FormatError(`${path}: not a binary PPM`);
  const width = parseInt(fields[1], 10);
  const height = parseInt(fields[2], 10);
  if (parseInt(fields[3], 10) !== 255) {
    throw new FormatError(`${path}: expected maxval 255`);
  }
  const need = width * height * 3;
  if (buf.length - pos < need) {
    throw new FormatError(`${path}: truncated PPM payload`);
  }
  const pixels = new Float64Array(need);
  for (let i = 0; i < need; i++) {
    pixels[i] = buf[pos + i] / 255.0;
  }
  return { width, height, pixels };
}
