/** Extraction pipeline: image sequence in, interchange files out.
 *
 *  Proposals come from the segmenter on the seed frame; each proposal's
 *  bounding box seeds the tracker across the whole sequence. Tracked
 *  regions get ids 1..R and are rasterized per frame (earlier ids keep
 *  contested pixels), then every (region, frame) masked image is
 *  embedded. Merging proposals from *multiple* seed frames and
 *  deduplicating them is deliberately left to the consumer's
 *  proposal-merging stage, which can ingest the emitted id rasters
 *  directly; this adapter only invokes models.
 */

import { mkdirSync, readdirSync } from "node:fs";
import path from "node:path";

import { readPpm, writeRegionIds, writeRegionFeatures, FeatureEntry } from "./formats.js";
import type { Backend, Box, FrameImage } from "./types.js";

export interface ExtractOptions {
  framesDir: string;
  outDir: string;
  backend: Backend;
  featureDim: number;
  seedFrame?: number;
}

export interface ExtractResult {
  regionIds: number[];
  frames: number[];
  featureEntries: number;
}

export function loadFrames(framesDir: string): FrameImage[] {
  const files = readdirSync(framesDir)
    .filter((f) => f.endsWith(".ppm"))
    .sort();
  if (files.length === 0) {
    throw new Error(`no .ppm frames found in ${framesDir}`);
  }
  return files.map((file, i) => {
    const match = /t_(\d+)\.ppm$/.exec(file);
    const index = match ? parseInt(match[1], 10) : i + 1;
    let decoded;
    try {
      decoded = readPpm(path.join(framesDir, file));
    } catch (err) {
      throw new Error(`failed to decode frame ${file}: ${err}`);
    }
    return {
      index,
      width: decoded.width,
      height: decoded.height,
      pixels: decoded.pixels,
    };
  });
}

function boxFromMask(mask: Uint8Array, width: number): Box {
  let rowMin = Infinity;
  let rowMax = -Infinity;
  let colMin = Infinity;
  let colMax = -Infinity;
  for (let p = 0; p < mask.length; p++) {
    if (!mask[p]) continue;
    const row = Math.floor(p / width);
    const col = p % width;
    rowMin = Math.min(rowMin, row);
    rowMax = Math.max(rowMax, row);
    colMin = Math.min(colMin, col);
    colMax = Math.max(colMax, col);
  }
  if (!isFinite(rowMin)) throw new Error("empty proposal mask");
  return { rowMin, colMin, rowMax, colMax };
}

export async function extract(options: ExtractOptions): Promise<ExtractResult> {
  const frames = loadFrames(options.framesDir);
  const { width, height } = frames[0];
  for (const frame of frames) {
    if (frame.width !== width || frame.height !== height) {
      throw new Error("frames do not share one resolution");
    }
  }
  const seedFrame = options.seedFrame ?? frames[0].index;
  const seed = frames.find((f) => f.index === seedFrame);
  if (!seed) throw new Error(`no frame with index ${seedFrame}`);

  const proposals = await options.backend.segmenter.propose(seed);
  if (proposals.length === 0) {
    throw new Error("segmenter returned no proposals on the seed frame");
  }
  const boxes = proposals.map((p) => boxFromMask(p.mask, width));
  const tracks = await options.backend.tracker.track(frames, boxes, seedFrame);

  // Rasterize: region r gets id r+1; earlier ids keep contested pixels.
  const grids = new Map<number, Uint16Array>();
  for (const frame of frames) grids.set(frame.index, new Uint16Array(width * height));
  for (let r = 0; r < tracks.length; r++) {
    const id = r + 1;
    for (const [frameIndex, mask] of tracks[r]) {
      const grid = grids.get(frameIndex);
      if (!grid) continue;
      for (let p = 0; p < mask.length; p++) {
        if (mask[p] && grid[p] === 0) grid[p] = id;
      }
    }
  }

  mkdirSync(path.join(options.outDir, "masks"), { recursive: true });
  for (const frame of frames) {
    const name = `t_${String(frame.index).padStart(4, "0")}.rid`;
    writeRegionIds(
      path.join(options.outDir, "masks", name),
      height,
      width,
      grids.get(frame.index)!,
    );
  }

  const entries: FeatureEntry[] = [];
  const regionIds = new Set<number>();
  for (const frame of frames) {
    const grid = grids.get(frame.index)!;
    const present = new Set<number>();
    for (const id of grid) if (id > 0) present.add(id);
    for (const id of [...present].sort((a, b) => a - b)) {
      const mask = new Uint8Array(width * height);
      let count = 0;
      for (let p = 0; p < grid.length; p++) {
        if (grid[p] === id) {
          mask[p] = 1;
          count++;
        }
      }
      const vector = await options.backend.embedder.embedMaskedImage(frame, mask);
      entries.push({
        regionId: id,
        frameIndex: frame.index,
        pixelCount: count,
        vector,
      });
      regionIds.add(id);
    }
  }
  writeRegionFeatures(
    path.join(options.outDir, "features.bin"),
    options.featureDim,
    entries,
  );
  return {
    regionIds: [...regionIds].sort((a, b) => a - b),
    frames: frames.map((f) => f.index),
    featureEntries: entries.length,
  };
}
