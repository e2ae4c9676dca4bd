/** Real foundation-model backend.
 *
 *  Wires three local ONNX checkpoints through @xenova/transformers:
 *    - an image-text embedder (CLIP-style vision tower with projection),
 *    - a promptable mask segmenter (SAM-style), driven by a point grid
 *      for whole-frame proposals,
 *    - the same promptable model re-prompted at the tracked region's
 *      centroid in each frame, which is how the mask is followed
 *      through the sequence when no dedicated video tracker export is
 *      available.
 *
 *  Nothing is downloaded: a missing package or checkpoint directory
 *  raises MissingCheckpointError so callers can fetch weights or fall
 *  back to the toy backend.
 */

import { existsSync } from "node:fs";
import path from "node:path";

import type {
  Backend,
  Box,
  Embedder,
  FrameImage,
  RegionProposal,
  Segmenter,
  Tracker,
} from "./types.js";

export interface ModelPaths {
  embedderDir: string;
  segmenterDir: string;
  /** Optional separate tracker checkpoint; defaults to the segmenter. */
  trackerDir?: string;
}

export class MissingCheckpointError extends Error {}

const POINT_GRID = 8; // proposals per side for whole-frame segmentation
const PROPOSAL_IOU_NMS = 0.9;
const MIN_REGION_PIXELS = 16;

async function loadTransformers(): Promise<any> {
  try {
    // Dynamic so the toy backend works without the package installed.
    return await import("@xenova/transformers" as string);
  } catch {
    throw new MissingCheckpointError(
      "the '@xenova/transformers' package is not installed; " +
        "install it and provide local model directories, or use --backend toy",
    );
  }
}

function requireCheckpoint(dir: string, what: string): void {
  if (!dir || !existsSync(dir) || !existsSync(path.join(dir, "config.json"))) {
    throw new MissingCheckpointError(
      `no ${what} checkpoint at ${dir || "<unset>"} (expected a local ONNX ` +
        "export with config.json); download one or use --backend toy",
    );
  }
}

function toRawImage(tf: any, frame: FrameImage, mask?: Uint8Array): any {
  const rgba = new Uint8ClampedArray(frame.width * frame.height * 4);
  for (let p = 0; p < frame.width * frame.height; p++) {
    const keep = mask ? (mask[p] ? 1 : 0) : 1;
    rgba[4 * p] = Math.round(frame.pixels[3 * p] * 255 * keep);
    rgba[4 * p + 1] = Math.round(frame.pixels[3 * p + 1] * 255 * keep);
    rgba[4 * p + 2] = Math.round(frame.pixels[3 * p + 2] * 255 * keep);
    rgba[4 * p + 3] = 255;
  }
  return new tf.RawImage(rgba, frame.width, frame.height, 4);
}

function maskIou(a: Uint8Array, b: Uint8Array): number {
  let inter = 0;
  let union = 0;
  for (let p = 0; p < a.length; p++) {
    if (a[p] && b[p]) inter++;
    if (a[p] || b[p]) union++;
  }
  return union ? inter / union : 0;
}

function centroid(mask: Uint8Array, width: number): [number, number] {
  let count = 0;
  let sumR = 0;
  let sumC = 0;
  for (let p = 0; p < mask.length; p++) {
    if (!mask[p]) continue;
    count++;
    sumR += Math.floor(p / width);
    sumC += p % width;
  }
  return [sumR / count, sumC / count];
}

class PromptableModel {
  private constructor(
    private tf: any,
    private processor: any,
    private model: any,
  ) {}

  static async load(dir: string): Promise<PromptableModel> {
    requireCheckpoint(dir, "promptable-segmenter");
    const tf = await loadTransformers();
    tf.env.allowRemoteModels = false;
    tf.env.localModelPath = path.dirname(dir);
    const name = path.basename(dir);
    const processor = await tf.SamProcessor.from_pretrained(name);
    const model = await tf.SamModel.from_pretrained(name);
    return new PromptableModel(tf, processor, model);
  }

  /** Best mask for one (x, y) point prompt, thresholded at 0. */
  async maskAtPoint(frame: FrameImage, x: number, y: number): Promise<Uint8Array> {
    const image = toRawImage(this.tf, frame);
    const inputs = await this.processor(image, {
      input_points: [[[x, y]]],
    });
    const outputs = await this.model(inputs);
    const masks = await this.processor.post_process_masks(
      outputs.pred_masks,
      inputs.original_sizes,
      inputs.reshaped_input_sizes,
    );
    const scores: Float32Array = outputs.iou_scores.data;
    let best = 0;
    for (let i = 1; i < scores.length; i++) {
      if (scores[i] > scores[best]) best = i;
    }
    const tensor = masks[0][0][best];
    const data: Uint8Array | Float32Array = tensor.data;
    const out = new Uint8Array(frame.width * frame.height);
    for (let p = 0; p < out.length; p++) out[p] = data[p] > 0 ? 1 : 0;
    return out;
  }
}

class PromptGridSegmenter implements Segmenter {
  constructor(private model: PromptableModel) {}

  async propose(frame: FrameImage): Promise<RegionProposal[]> {
    const kept: Uint8Array[] = [];
    for (let gy = 0; gy < POINT_GRID; gy++) {
      for (let gx = 0; gx < POINT_GRID; gx++) {
        const x = ((gx + 0.5) / POINT_GRID) * frame.width;
        const y = ((gy + 0.5) / POINT_GRID) * frame.height;
        const mask = await this.model.maskAtPoint(frame, x, y);
        let count = 0;
        for (const v of mask) count += v;
        if (count < MIN_REGION_PIXELS) continue;
        if (kept.some((m) => maskIou(m, mask) > PROPOSAL_IOU_NMS)) continue;
        kept.push(mask);
      }
    }
    // Make proposals disjoint: earlier (first-proposed) masks win pixels.
    const taken = new Uint8Array(frame.width * frame.height);
    const out: RegionProposal[] = [];
    for (const mask of kept) {
      let count = 0;
      for (let p = 0; p < mask.length; p++) {
        if (mask[p] && !taken[p]) {
          taken[p] = 1;
          count++;
        } else {
          mask[p] = 0;
        }
      }
      if (count >= MIN_REGION_PIXELS) out.push({ mask, pixelCount: count });
    }
    return out;
  }
}

class RepromptTracker implements Tracker {
  constructor(private model: PromptableModel) {}

  async track(
    frames: FrameImage[],
    boxes: Box[],
    seedFrame: number,
  ): Promise<Map<number, Uint8Array>[]> {
    const byIndex = new Map(frames.map((f) => [f.index, f]));
    const seed = byIndex.get(seedFrame);
    if (!seed) throw new Error(`no frame with index ${seedFrame}`);
    const indices = frames.map((f) => f.index).sort((a, b) => a - b);

    const out: Map<number, Uint8Array>[] = [];
    for (const box of boxes) {
      const cx = (box.colMin + box.colMax) / 2;
      const cy = (box.rowMin + box.rowMax) / 2;
      const seedMask = await this.model.maskAtPoint(seed, cx, cy);
      const masks = new Map<number, Uint8Array>();
      masks.set(seedFrame, seedMask);
      for (const direction of [1, -1]) {
        let anchor = seedMask;
        let at = seedFrame;
        for (;;) {
          const next = indices.includes(at + direction) ? at + direction : null;
          if (next === null) break;
          const [row, col] = centroid(anchor, seed.width);
          const mask = await this.model.maskAtPoint(byIndex.get(next)!, col, row);
          let count = 0;
          for (const v of mask) count += v;
          if (count < MIN_REGION_PIXELS) break;
          masks.set(next, mask);
          anchor = mask;
          at = next;
        }
      }
      out.push(masks);
    }
    return out;
  }
}

class ClipEmbedder implements Embedder {
  private constructor(
    public readonly featureDim: number,
    private tf: any,
    private processor: any,
    private model: any,
  ) {}

  static async load(dir: string, featureDim: number): Promise<ClipEmbedder> {
    requireCheckpoint(dir, "image-text embedder");
    const tf = await loadTransformers();
    tf.env.allowRemoteModels = false;
    tf.env.localModelPath = path.dirname(dir);
    const name = path.basename(dir);
    const processor = await tf.AutoProcessor.from_pretrained(name);
    const model = await tf.CLIPVisionModelWithProjection.from_pretrained(name);
    return new ClipEmbedder(featureDim, tf, processor, model);
  }

  async embedMaskedImage(
    frame: FrameImage,
    mask: Uint8Array,
  ): Promise<Float64Array> {
    const image = toRawImage(this.tf, frame, mask);
    const inputs = await this.processor(image);
    const { image_embeds } = await this.model(inputs);
    const raw: Float32Array = image_embeds.data;
    if (raw.length !== this.featureDim) {
      throw new Error(
        `embedder produced dim ${raw.length}, expected ${this.featureDim}`,
      );
    }
    const v = new Float64Array(raw.length);
    let norm = 0;
    for (let d = 0; d < raw.length; d++) {
      v[d] = raw[d];
      norm += raw[d] * raw[d];
    }
    norm = Math.sqrt(norm);
    for (let d = 0; d < v.length; d++) v[d] /= norm;
    return v;
  }
}

export async function modelBackend(
  paths: ModelPaths,
  featureDim: number,
): Promise<Backend> {
  const embedder = await ClipEmbedder.load(paths.embedderDir, featureDim);
  const segModel = await PromptableModel.load(paths.segmenterDir);
  const trackModel = paths.trackerDir
    ? await PromptableModel.load(paths.trackerDir)
    : segModel;
  return {
    segmenter: new PromptGridSegmenter(segModel),
    tracker: new RepromptTracker(trackModel),
    embedder,
  };
}
