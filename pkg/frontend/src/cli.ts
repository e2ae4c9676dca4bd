#!/usr/bin/env node
/** CLI entry: `splatlang-extract extract --frames DIR --out DIR [...]`. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { extract } from "./extract.js";
import { MissingCheckpointError, modelBackend } from "./models.js";
import { toyBackend } from "./toy.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command("extract", "run segmenter+tracker+embedder over a frame sequence")
    .demandCommand(1)
    .option("frames", { type: "string", demandOption: true, describe: "directory of t_%04d.ppm frames" })
    .option("out", { type: "string", demandOption: true, describe: "output directory (masks/, features.bin)" })
    .option("backend", { choices: ["toy", "models"] as const, default: "toy" })
    .option("feature-dim", { type: "number", default: 512 })
    .option("seed-frame", { type: "number", describe: "frame whose proposals seed tracking (default: first)" })
    .option("seed", { type: "number", default: 0, describe: "toy-backend determinism seed" })
    .option("embedder-dir", { type: "string", describe: "local embedder checkpoint dir" })
    .option("segmenter-dir", { type: "string", describe: "local segmenter checkpoint dir" })
    .option("tracker-dir", { type: "string", describe: "local tracker checkpoint dir" })
    .option("device", { type: "string", default: "cpu", describe: "accepted for parity; inference is cpu" })
    .strict()
    .parse();

  console.error(`[splatlang-extract] config: ${JSON.stringify(argv)}`);
  try {
    const backend =
      argv.backend === "toy"
        ? toyBackend(argv.featureDim, argv.seed)
        : await modelBackend(
            {
              embedderDir: argv.embedderDir ?? "",
              segmenterDir: argv.segmenterDir ?? "",
              trackerDir: argv.trackerDir,
            },
            argv.featureDim,
          );
    const result = await extract({
      framesDir: argv.frames,
      outDir: argv.out,
      backend,
      featureDim: argv.featureDim,
      seedFrame: argv.seedFrame,
    });
    console.log(
      `emitted ${result.regionIds.length} tracked regions over ` +
        `${result.frames.length} frames (${result.featureEntries} embeddings)`,
    );
    return 0;
  } catch (err) {
    if (err instanceof MissingCheckpointError) {
      console.error(`[splatlang-extract] missing checkpoint: ${err.message}`);
    } else {
      console.error(`[splatlang-extract] error: ${err}`);
    }
    return 1;
  }
}

main().then((code) => process.exit(code));
