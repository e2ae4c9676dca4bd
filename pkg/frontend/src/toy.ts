/** Deterministic model-free backend for hermetic tests and demos.
 *
 *  Segmenter: connected components of pixels above a luminance floor.
 *  Tracker: associates the seed component across frames by centroid
 *  proximity (nearest component within a travel budget).
 *  Embedder: unit vector derived from the region's quantized mean color
 *  via a seeded PRNG, so the same object embeds consistently.
 */

import type {
  Backend,
  Box,
  Embedder,
  FrameImage,
  RegionProposal,
  Segmenter,
  Tracker,
} from "./types.js";

const LUMINANCE_FLOOR = 0.08;
const MAX_TRAVEL_PX = 14;

interface Component {
  mask: Uint8Array;
  pixelCount: number;
  centroidRow: number;
  centroidCol: number;
  meanColor: [number, number, number];
}

function connectedComponents(frame: FrameImage, floor: number): Component[] {
  const { width, height, pixels } = frame;
  const lit = new Uint8Array(width * height);
  for (let p = 0; p < width * height; p++) {
    const lum =
      0.299 * pixels[3 * p] + 0.587 * pixels[3 * p + 1] + 0.114 * pixels[3 * p + 2];
    lit[p] = lum > floor ? 1 : 0;
  }
  const seen = new Uint8Array(width * height);
  const components: Component[] = [];
  for (let start = 0; start < width * height; start++) {
    if (!lit[start] || seen[start]) continue;
    const mask = new Uint8Array(width * height);
    const queue = [start];
    seen[start] = 1;
    let count = 0;
    let sumR = 0;
    let sumC = 0;
    const color = [0, 0, 0];
    while (queue.length) {
      const p = queue.pop()!;
      mask[p] = 1;
      count++;
      const row = Math.floor(p / width);
      const col = p % width;
      sumR += row;
      sumC += col;
      color[0] += frame.pixels[3 * p];
      color[1] += frame.pixels[3 * p + 1];
      color[2] += frame.pixels[3 * p + 2];
      const neighbors = [
        row > 0 ? p - width : -1,
        row < height - 1 ? p + width : -1,
        col > 0 ? p - 1 : -1,
        col < width - 1 ? p + 1 : -1,
      ];
      for (const q of neighbors) {
        if (q >= 0 && lit[q] && !seen[q]) {
          seen[q] = 1;
          queue.push(q);
        }
      }
    }
    components.push({
      mask,
      pixelCount: count,
      centroidRow: sumR / count,
      centroidCol: sumC / count,
      meanColor: [color[0] / count, color[1] / count, color[2] / count],
    });
  }
  // Stable ordering: largest first, ties by centroid.
  components.sort(
    (a, b) =>
      b.pixelCount - a.pixelCount ||
      a.centroidRow - b.centroidRow ||
      a.centroidCol - b.centroidCol,
  );
  return components;
}

class ToySegmenter implements Segmenter {
  constructor(private floor: number = LUMINANCE_FLOOR) {}

  async propose(frame: FrameImage): Promise<RegionProposal[]> {
    return connectedComponents(frame, this.floor).map((c) => ({
      mask: c.mask,
      pixelCount: c.pixelCount,
    }));
  }
}

class ToyTracker implements Tracker {
  constructor(private floor: number = LUMINANCE_FLOOR) {}

  async track(
    frames: FrameImage[],
    boxes: Box[],
    seedFrame: number,
  ): Promise<Map<number, Uint8Array>[]> {
    const perFrame = new Map<number, Component[]>();
    for (const frame of frames) {
      perFrame.set(frame.index, connectedComponents(frame, this.floor));
    }
    const seed = perFrame.get(seedFrame);
    if (!seed) throw new Error(`no frame with index ${seedFrame}`);

    const out: Map<number, Uint8Array>[] = [];
    for (const box of boxes) {
      // Seed component: the one owning most pixels inside the box.
      let best: Component | null = null;
      let bestCount = 0;
      for (const comp of seed) {
        let inside = 0;
        for (let r = box.rowMin; r <= box.rowMax; r++) {
          for (let c = box.colMin; c <= box.colMax; c++) {
            const frameWidth = frames[0].width;
            if (comp.mask[r * frameWidth + c]) inside++;
          }
        }
        if (inside > bestCount) {
          best = comp;
          bestCount = inside;
        }
      }
      if (!best) throw new Error(`seed box covers no component`);

      // Follow the component outward from the seed frame by centroid
      // proximity, allowing steady motion.
      const masks = new Map<number, Uint8Array>();
      masks.set(seedFrame, best.mask);
      const indices = frames.map((f) => f.index).sort((a, b) => a - b);
      for (const direction of [1, -1]) {
        let anchor = best;
        let at = seedFrame;
        for (;;) {
          const next = indices.includes(at + direction) ? at + direction : null;
          if (next === null) break;
          const candidates = perFrame.get(next)!;
          let match: Component | null = null;
          let bestDist = MAX_TRAVEL_PX;
          for (const comp of candidates) {
            const dist = Math.hypot(
              comp.centroidRow - anchor.centroidRow,
              comp.centroidCol - anchor.centroidCol,
            );
            if (dist < bestDist) {
              match = comp;
              bestDist = dist;
            }
          }
          if (!match) break;
          masks.set(next, match.mask);
          anchor = match;
          at = next;
        }
      }
      out.push(masks);
    }
    return out;
  }
}

/** Small deterministic PRNG (splitmix64-style over a 32-bit state). */
function seededUnitVector(seed: number, dim: number): Float64Array {
  let state = seed >>> 0;
  const next = () => {
    state = (state + 0x9e3779b9) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad) >>> 0;
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97) >>> 0;
    return ((z ^ (z >>> 15)) >>> 0) / 0x100000000;
  };
  const v = new Float64Array(dim);
  let norm = 0;
  for (let d = 0; d < dim; d++) {
    // Box-Muller from two uniforms.
    const u1 = Math.max(next(), 1e-12);
    const u2 = next();
    v[d] = Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
    norm += v[d] * v[d];
  }
  norm = Math.sqrt(norm);
  for (let d = 0; d < dim; d++) v[d] /= norm;
  return v;
}

class ToyEmbedder implements Embedder {
  constructor(
    public readonly featureDim: number,
    private seed: number = 0,
  ) {}

  async embedMaskedImage(
    frame: FrameImage,
    mask: Uint8Array,
  ): Promise<Float64Array> {
    let count = 0;
    const color = [0, 0, 0];
    for (let p = 0; p < mask.length; p++) {
      if (!mask[p]) continue;
      count++;
      color[0] += frame.pixels[3 * p];
      color[1] += frame.pixels[3 * p + 1];
      color[2] += frame.pixels[3 * p + 2];
    }
    if (count === 0) throw new Error("empty mask");
    // Quantize the mean color so the same object hashes identically
    // across frames despite boundary jitter.
    const q = color.map((x) => Math.round((x / count) * 8));
    const key = ((q[0] * 31 + q[1]) * 31 + q[2]) * 31 + this.seed;
    return seededUnitVector(key, this.featureDim);
  }
}

export function toyBackend(featureDim: number, seed = 0): Backend {
  return {
    segmenter: new ToySegmenter(),
    tracker: new ToyTracker(),
    embedder: new ToyEmbedder(featureDim, seed),
  };
}
