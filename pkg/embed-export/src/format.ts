/** MEPAEMB1 binary embedding files.
 *
 * Layout, all integers little-endian:
 *
 *     8 bytes   magic "MEPAEMB1"
 *     u32       dimension
 *     u64       record count
 *     repeated  u32 id byte-length, UTF-8 id bytes, dim float32 values
 *
 * The consumer normalizes at ingestion, so vectors are written exactly
 * as the encoder produced them. Writes go through a temp file in the
 * target directory and a rename, so a crash never leaves a half-written
 * file under the final name.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { WriteFailure } from "./errors.js";

export const MAGIC = Buffer.from("MEPAEMB1", "ascii");

export interface EmbeddingRecord {
  id: string;
  values: Float32Array;
}

export function encodeEmbeddings(records: readonly EmbeddingRecord[], dim: number): Buffer {
  if (dim <= 0 || !Number.isInteger(dim)) {
    throw new RangeError(`dimension must be a positive integer, got ${dim}`);
  }
  const header = Buffer.alloc(MAGIC.length + 4 + 8);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(dim, MAGIC.length);
  header.writeBigUInt64LE(BigInt(records.length), MAGIC.length + 4);

  const parts: Buffer[] = [header];
  for (const rec of records) {
    if (rec.values.length !== dim) {
      throw new RangeError(
        `record ${JSON.stringify(rec.id)} has ${rec.values.length} values, expected ${dim}`,
      );
    }
    const idBytes = Buffer.from(rec.id, "utf-8");
    const lenBuf = Buffer.alloc(4);
    lenBuf.writeUInt32LE(idBytes.length, 0);
    // Copy through a fresh buffer so the output is independent of the
    // source array's endianness-sensitive backing store.
    const valBuf = Buffer.alloc(dim * 4);
    for (let i = 0; i < dim; i++) {
      valBuf.writeFloatLE(rec.values[i], i * 4);
    }
    parts.push(lenBuf, idBytes, valBuf);
  }
  return Buffer.concat(parts);
}

export function writeEmbeddings(
  filePath: string,
  records: readonly EmbeddingRecord[],
  dim: number,
): void {
  const blob = encodeEmbeddings(records, dim);
  atomicWrite(filePath, blob);
}

/** Write via temp file + rename; wraps any fs error as WriteFailure. */
export function atomicWrite(filePath: string, data: Buffer | string): void {
  const dir = path.dirname(filePath);
  const tmp = path.join(dir, `.${path.basename(filePath)}.tmp-${process.pid}`);
  try {
    fs.writeFileSync(tmp, data);
    fs.renameSync(tmp, filePath);
  } catch (err) {
    try {
      fs.rmSync(tmp, { force: true });
    } catch {
      // best effort; the original error is the one that matters
    }
    throw new WriteFailure(filePath, err);
  }
}

export function readEmbeddings(filePath: string): { dim: number; records: EmbeddingRecord[] } {
  const buf = fs.readFileSync(filePath);
  if (buf.length < MAGIC.length + 12 || !buf.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error(`${filePath}: not a MEPAEMB1 file`);
  }
  const dim = buf.readUInt32LE(MAGIC.length);
  const count = buf.readBigUInt64LE(MAGIC.length + 4);
  let off = MAGIC.length + 12;
  const records: EmbeddingRecord[] = [];
  for (let i = 0n; i < count; i++) {
    const idLen = buf.readUInt32LE(off);
    off += 4;
    const id = buf.subarray(off, off + idLen).toString("utf-8");
    off += idLen;
    const values = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      values[j] = buf.readFloatLE(off + j * 4);
    }
    off += dim * 4;
    records.push({ id, values });
  }
  if (off !== buf.length) {
    throw new Error(`${filePath}: ${buf.length - off} trailing bytes after last record`);
  }
  return { dim, records };
}
