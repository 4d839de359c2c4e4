/** The export job: manifest in, embedding files out.
 *
 * Record order always equals manifest order, every manifest id appears
 * exactly once per output file, and vectors land unnormalized. Images
 * are checked for existence up front so a missing file is reported
 * before any model loads. Inference runs in batches of `batchSize`;
 * encoders are per-item deterministic, so batch size never changes the
 * bytes written.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { loadEncoder, type Encoder, type ImageItem } from "./encoders.js";
import { MissingImage } from "./errors.js";
import { atomicWrite, writeEmbeddings, type EmbeddingRecord } from "./format.js";
import { readKbManifest, readQueriesManifest } from "./manifest.js";

export const DEFAULT_BATCH_SIZE = 32;

export interface ExportJob {
  manifestPath: string;
  encoder: string;
  deviceHint?: string;
  batchSize?: number;
  outImages: string;
  outMeta: string;
  /** Optional second manifest whose question texts are embedded too. */
  queriesPath?: string;
  outQueries?: string;
}

export interface ExportResult {
  encoder: string;
  checkpoint: string;
  dim: number;
  imageCount: number;
  metadataCount: number;
  queryCount?: number;
  sidecarPath: string;
}

export async function runExport(job: ExportJob): Promise<ExportResult> {
  if ((job.queriesPath === undefined) !== (job.outQueries === undefined)) {
    throw new Error("queriesPath and outQueries must be given together");
  }
  const batchSize = job.batchSize ?? DEFAULT_BATCH_SIZE;
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new RangeError(`batch size must be a positive integer, got ${batchSize}`);
  }

  const rows = readKbManifest(job.manifestPath);
  const queries = job.queriesPath !== undefined ? readQueriesManifest(job.queriesPath) : null;

  const manifestDir = path.dirname(path.resolve(job.manifestPath));
  const items: ImageItem[] = rows.map((r) => ({
    id: r.id,
    path: path.resolve(manifestDir, r.imageRef),
  }));
  for (const it of items) {
    if (!fs.existsSync(it.path)) {
      throw new MissingImage(it.id, it.path);
    }
  }

  const encoder = await loadEncoder(job.encoder, job.deviceHint);

  const imageVecs = await inBatches(items, batchSize, (b) => encoder.encodeImages(b));
  const metaVecs = await inBatches(rows.map((r) => r.metadataText), batchSize, (b) =>
    encoder.encodeTexts(b),
  );
  const queryVecs = queries
    ? await inBatches(queries.map((q) => q.question), batchSize, (b) => encoder.encodeTexts(b))
    : null;

  writeEmbeddings(job.outImages, zip(rows.map((r) => r.id), imageVecs), encoder.dim);
  writeEmbeddings(job.outMeta, zip(rows.map((r) => r.id), metaVecs), encoder.dim);
  if (queries && queryVecs && job.outQueries !== undefined) {
    writeEmbeddings(job.outQueries, zip(queries.map((q) => q.id), queryVecs), encoder.dim);
  }

  const sidecarPath = `${job.outImages}.export.json`;
  const sidecar = {
    format: "MEPAEMB1",
    encoder: encoder.family,
    checkpoint: encoder.checkpoint,
    dim: encoder.dim,
    batch_size: batchSize,
    device: job.deviceHint ?? "cpu",
    counts: {
      images: rows.length,
      metadata: rows.length,
      ...(queries ? { queries: queries.length } : {}),
    },
    outputs: {
      images: path.basename(job.outImages),
      metadata: path.basename(job.outMeta),
      ...(job.outQueries !== undefined ? { queries: path.basename(job.outQueries) } : {}),
    },
  };
  atomicWrite(sidecarPath, JSON.stringify(sidecar, null, 2) + "\n");

  return {
    encoder: encoder.family,
    checkpoint: encoder.checkpoint,
    dim: encoder.dim,
    imageCount: rows.length,
    metadataCount: rows.length,
    ...(queries ? { queryCount: queries.length } : {}),
    sidecarPath,
  };
}

async function inBatches<T>(
  items: T[],
  size: number,
  encode: (batch: T[]) => Promise<Float32Array[]>,
): Promise<Float32Array[]> {
  const out: Float32Array[] = [];
  for (let start = 0; start < items.length; start += size) {
    const batch = items.slice(start, start + size);
    const vecs = await encode(batch);
    if (vecs.length !== batch.length) {
      throw new Error(`encoder returned ${vecs.length} vectors for a batch of ${batch.length}`);
    }
    out.push(...vecs);
  }
  return out;
}

function zip(ids: string[], vecs: Float32Array[]): EmbeddingRecord[] {
  return ids.map((id, i) => ({ id, values: vecs[i] }));
}
