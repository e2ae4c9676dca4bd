/** Model-facing interfaces the extraction pipeline is written against. */

export interface FrameImage {
  /** 1-based frame index parsed from the file name. */
  index: number;
  width: number;
  height: number;
  /** Row-major RGB, values in [0, 1]. */
  pixels: Float64Array;
}

export interface RegionProposal {
  /** Row-major boolean mask, length height*width. */
  mask: Uint8Array;
  pixelCount: number;
}

export interface Box {
  rowMin: number;
  colMin: number;
  rowMax: number;
  colMax: number;
}

/** Proposes regions on a single frame (promptable image segmenter role). */
export interface Segmenter {
  propose(frame: FrameImage): Promise<RegionProposal[]>;
}

/** Tracks seed boxes across the whole sequence (video tracker role).
 *  Returns per-region masks keyed by frame index; equal array positions
 *  across frames belong to one tracked region. */
export interface Tracker {
  track(
    frames: FrameImage[],
    boxes: Box[],
    seedFrame: number,
  ): Promise<Map<number, Uint8Array>[]>;
}

/** Joint image/text embedding model; image outputs are unit vectors. */
export interface Embedder {
  readonly featureDim: number;
  embedMaskedImage(frame: FrameImage, mask: Uint8Array): Promise<Float64Array>;
}

export interface Backend {
  segmenter: Segmenter;
  tracker: Tracker;
  embedder: Embedder;
}
