import { execFileSync } from "node:child_process";
import { mkdtempSync, writeFileSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import path from "node:path";

import { describe, expect, it } from "vitest";

import { extract, loadFrames } from "../src/extract.js";
import {
  FormatError,
  readRegionFeatures,
  readRegionIds,
  writeRegionFeatures,
  writeRegionIds,
} from "../src/formats.js";
import { toyBackend } from "../src/toy.js";

function writePpm(filePath: string, width: number, height: number, rgb: number[][]): void {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    body[3 * p] = Math.round(rgb[p][0] * 255);
    body[3 * p + 1] = Math.round(rgb[p][1] * 255);
    body[3 * p + 2] = Math.round(rgb[p][2] * 255);
  }
  writeFileSync(filePath, Buffer.concat([header, body]));
}

function makeToyClip(dir: string, frames = 3, size = 32): void {
  for (let t = 1; t <= frames; t++) {
    const rgb: number[][] = [];
    const centerRow = 10 + 4 * t;
    const centerCol = 8 + 5 * t;
    for (let r = 0; r < size; r++) {
      for (let c = 0; c < size; c++) {
        const inside =
          Math.abs(r - centerRow) < 4 && Math.abs(c - centerCol) < 4;
        rgb.push(inside ? [0.9, 0.25, 0.2] : [0, 0, 0]);
      }
    }
    writePpm(path.join(dir, `t_${String(t).padStart(4, "0")}.ppm`), size, size, rgb);
  }
}

describe("formats", () => {
  it("region-id rasters round-trip", () => {
    const dir = mkdtempSync(path.join(tmpdir(), "fmt-"));
    const grid = new Uint16Array(12);
    grid[3] = 5;
    grid[7] = 9;
    const file = path.join(dir, "t_0001.rid");
    writeRegionIds(file, 3, 4, grid);
    const back = readRegionIds(file);
    expect(back.height).toBe(3);
    expect(back.width).toBe(4);
    expect([...back.grid]).toEqual([...grid]);
  });

  it("region features round-trip", () => {
    const dir = mkdtempSync(path.join(tmpdir(), "fmt-"));
    const file = path.join(dir, "features.bin");
    const vector = new Float64Array([0.5, -0.25, 0.125, 1.0]);
    writeRegionFeatures(file, 4, [
      { regionId: 3, frameIndex: 2, pixelCount: 40, vector },
    ]);
    const back = readRegionFeatures(file);
    expect(back.featureDim).toBe(4);
    expect(back.entries).toHaveLength(1);
    expect(back.entries[0].regionId).toBe(3);
    expect(back.entries[0].pixelCount).toBe(40);
    expect([...back.entries[0].vector]).toEqual([...vector]);
  });

  it("rejects corrupted magic", () => {
    const dir = mkdtempSync(path.join(tmpdir(), "fmt-"));
    const file = path.join(dir, "t.rid");
    writeRegionIds(file, 2, 2, new Uint16Array(4));
    const raw = readFileSync(file);
    raw[0] = "X".charCodeAt(0);
    writeFileSync(file, raw);
    expect(() => readRegionIds(file)).toThrow(FormatError);
  });

  it("rejects truncated payloads", () => {
    const dir = mkdtempSync(path.join(tmpdir(), "fmt-"));
    const file = path.join(dir, "t.rid");
    writeRegionIds(file, 2, 2, new Uint16Array(4));
    writeFileSync(file, readFileSync(file).subarray(0, 10));
    expect(() => readRegionIds(file)).toThrow(FormatError);
  });
});

describe("toy extraction", () => {
  it("tracks one moving object across a 3-frame clip", async () => {
    const clip = mkdtempSync(path.join(tmpdir(), "clip-"));
    const out = mkdtempSync(path.join(tmpdir(), "out-"));
    makeToyClip(clip);
    const result = await extract({
      framesDir: clip,
      outDir: out,
      backend: toyBackend(16, 0),
      featureDim: 16,
    });
    expect(result.frames).toEqual([1, 2, 3]);
    expect(result.regionIds).toEqual([1]);

    for (const t of [1, 2, 3]) {
      const { grid } = readRegionIds(
        path.join(out, "masks", `t_${String(t).padStart(4, "0")}.rid`),
      );
      const ids = new Set([...grid].filter((x) => x > 0));
      expect(ids).toEqual(new Set([1]));
    }
    const { entries } = readRegionFeatures(path.join(out, "features.bin"));
    expect(entries).toHaveLength(3);
    for (const entry of entries) {
      const norm = Math.hypot(...entry.vector);
      expect(Math.abs(norm - 1)).toBeLessThan(1e-6);
      expect(entry.pixelCount).toBeGreaterThan(0);
    }
    // Same object, same quantized color: identical embedding per frame.
    expect([...entries[0].vector]).toEqual([...entries[1].vector]);
  });

  it("is deterministic for a fixed seed", async () => {
    const clip = mkdtempSync(path.join(tmpdir(), "clip-"));
    makeToyClip(clip);
    const outA = mkdtempSync(path.join(tmpdir(), "outA-"));
    const outB = mkdtempSync(path.join(tmpdir(), "outB-"));
    await extract({ framesDir: clip, outDir: outA, backend: toyBackend(8, 7), featureDim: 8 });
    await extract({ framesDir: clip, outDir: outB, backend: toyBackend(8, 7), featureDim: 8 });
    expect(readFileSync(path.join(outA, "features.bin"))).toEqual(
      readFileSync(path.join(outB, "features.bin")),
    );
  });

  it("errors on an empty frames directory", () => {
    const empty = mkdtempSync(path.join(tmpdir(), "empty-"));
    expect(() => loadFrames(empty)).toThrow(/no .ppm frames/);
  });

  it("errors on an undecodable frame", () => {
    const clip = mkdtempSync(path.join(tmpdir(), "clip-"));
    writeFileSync(path.join(clip, "t_0001.ppm"), "P6\n2 2\n255\n");
    expect(() => loadFrames(clip)).toThrow(/failed to decode/);
  });
});

describe("cli", () => {
  const cliPath = path.resolve(__dirname, "..", "dist", "cli.js");

  it("extract subcommand emits files and exits zero", () => {
    const clip = mkdtempSync(path.join(tmpdir(), "clip-"));
    const out = mkdtempSync(path.join(tmpdir(), "out-"));
    makeToyClip(clip);
    const stdout = execFileSync(
      "node",
      [cliPath, "extract", "--frames", clip, "--out", out, "--backend", "toy",
       "--feature-dim", "24"],
      { encoding: "utf-8" },
    );
    expect(stdout).toContain("emitted 1 tracked regions over 3 frames");
    const { featureDim } = readRegionFeatures(path.join(out, "features.bin"));
    expect(featureDim).toBe(24);
  });

  it("missing checkpoints fail with an explicit message", () => {
    const clip = mkdtempSync(path.join(tmpdir(), "clip-"));
    const out = mkdtempSync(path.join(tmpdir(), "out-"));
    makeToyClip(clip);
    let failed = false;
    try {
      execFileSync(
        "node",
        [cliPath, "extract", "--frames", clip, "--out", out,
         "--backend", "models", "--embedder-dir", "/nonexistent/clip"],
        { encoding: "utf-8", stdio: "pipe" },
      );
    } catch (err: any) {
      failed = true;
      expect(String(err.stderr)).toMatch(/checkpoint|transformers/);
    }
    expect(failed).toBe(true);
  });
});
