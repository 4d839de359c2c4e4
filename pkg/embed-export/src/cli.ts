#!/usr/bin/env node
/** Command line for the exporter.
 *
 *   embed-export export --manifest kb.jsonl --encoder pixelstat \
 *       --out-images img.emb --out-meta meta.emb \
 *       [--queries queries.jsonl --out-queries q.emb] \
 *       [--batch-size 32] [--device cpu]
 *
 * Exit codes follow the harness convention: 2 usage or configuration,
 * 3 encoder or environment, 4 data (manifest, images, writes).
 */

import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";
import { supportedEncoders } from "./encoders.js";
import {
  EncoderLoadFailure,
  ImageDecodeError,
  ManifestError,
  MissingImage,
  UnknownEncoder,
  WriteFailure,
} from "./errors.js";
import { runExport, DEFAULT_BATCH_SIZE } from "./export.js";

const USAGE = `usage: embed-export export --manifest M --encoder NAME --out-images F1 --out-meta F2
                            [--queries Q --out-queries F3] [--batch-size N] [--device D]

encoders: ${supportedEncoders().join(", ")}`;

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== "export") {
    process.stderr.write(
      argv.length === 0 ? USAGE + "\n" : `unknown command ${JSON.stringify(argv[0])}\n${USAGE}\n`,
    );
    return 2;
  }

  let parsed;
  try {
    parsed = parseArgs({
      args: argv.slice(1),
      options: {
        manifest: { type: "string" },
        encoder: { type: "string" },
        "out-images": { type: "string" },
        "out-meta": { type: "string" },
        queries: { type: "string" },
        "out-queries": { type: "string" },
        "batch-size": { type: "string", default: String(DEFAULT_BATCH_SIZE) },
        device: { type: "string" },
      },
      strict: true,
    });
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n${USAGE}\n`);
    return 2;
  }

  const v = parsed.values;
  for (const key of ["manifest", "encoder", "out-images", "out-meta"] as const) {
    if (v[key] === undefined) {
      process.stderr.write(`missing required --${key}\n${USAGE}\n`);
      return 2;
    }
  }
  if ((v.queries === undefined) !== (v["out-queries"] === undefined)) {
    process.stderr.write(`--queries and --out-queries go together\n${USAGE}\n`);
    return 2;
  }
  const batchSize = Number(v["batch-size"]);
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    process.stderr.write(`--batch-size must be a positive integer\n`);
    return 2;
  }

  try {
    const result = await runExport({
      manifestPath: v.manifest!,
      encoder: v.encoder!,
      deviceHint: v.device,
      batchSize,
      outImages: v["out-images"]!,
      outMeta: v["out-meta"]!,
      queriesPath: v.queries,
      outQueries: v["out-queries"],
    });
    process.stdout.write(
      `encoder ${result.encoder} (${result.checkpoint}), dim ${result.dim}\n` +
        `wrote ${result.imageCount} image vectors -> ${v["out-images"]}\n` +
        `wrote ${result.metadataCount} metadata vectors -> ${v["out-meta"]}\n` +
        (result.queryCount !== undefined
          ? `wrote ${result.queryCount} query vectors -> ${v["out-queries"]}\n`
          : "") +
        `export metadata -> ${result.sidecarPath}\n`,
    );
    return 0;
  } catch (err) {
    if (err instanceof UnknownEncoder) {
      process.stderr.write(`${err.message}\n`);
      return 2;
    }
    if (err instanceof EncoderLoadFailure) {
      process.stderr.write(`${err.message}\n`);
      return 3;
    }
    if (
      err instanceof ManifestError ||
      err instanceof MissingImage ||
      err instanceof ImageDecodeError ||
      err instanceof WriteFailure
    ) {
      process.stderr.write(`${err.message}\n`);
      return 4;
    }
    throw err;
  }
}

const invokedAsScript =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedAsScript) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(err);
      process.exit(1);
    },
  );
}
