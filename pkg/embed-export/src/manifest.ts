/** Readers for the harness's JSONL manifests.
 *
 * KB manifest lines carry {id, image_ref, metadata_text, poisoned,
 * payload_answer?}; query manifest lines carry {id, question, ...}.
 * Only the fields the exporter consumes are surfaced. Order is
 * preserved: output files mirror manifest order record for record.
 */

import * as fs from "node:fs";
import { ManifestError } from "./errors.js";

export interface KbRow {
  id: string;
  imageRef: string;
  metadataText: string;
}

export interface QueryRow {
  id: string;
  question: string;
}

function parseLines(path: string): Array<{ line: number; obj: Record<string, unknown> }> {
  let raw: string;
  try {
    raw = fs.readFileSync(path, "utf-8");
  } catch (err) {
    throw new ManifestError(
      `cannot read ${path}: ${err instanceof Error ? err.message : err}`,
    );
  }
  const out: Array<{ line: number; obj: Record<string, unknown> }> = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const text = lines[i].trim();
    if (!text) continue;
    let obj: unknown;
    try {
      obj = JSON.parse(text);
    } catch (err) {
      throw new ManifestError(
        `${path}:${i + 1}: invalid JSON (${err instanceof Error ? err.message : err})`,
      );
    }
    if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
      throw new ManifestError(`${path}:${i + 1}: expected an object per line`);
    }
    out.push({ line: i + 1, obj: obj as Record<string, unknown> });
  }
  return out;
}

function requireString(
  path: string,
  line: number,
  obj: Record<string, unknown>,
  key: string,
): string {
  const v = obj[key];
  if (typeof v !== "string") {
    throw new ManifestError(`${path}:${line}: missing or non-string ${JSON.stringify(key)}`);
  }
  return v;
}

function rejectDuplicates(path: string, ids: string[]): void {
  const seen = new Set<string>();
  for (const id of ids) {
    if (seen.has(id)) {
      throw new ManifestError(`${path}: duplicate id ${JSON.stringify(id)}`);
    }
    seen.add(id);
  }
}

export function readKbManifest(path: string): KbRow[] {
  const rows = parseLines(path).map(({ line, obj }) => ({
    id: requireString(path, line, obj, "id"),
    imageRef: requireString(path, line, obj, "image_ref"),
    metadataText: requireString(path, line, obj, "metadata_text"),
  }));
  rejectDuplicates(path, rows.map((r) => r.id));
  return rows;
}

export function readQueriesManifest(path: string): QueryRow[] {
  const rows = parseLines(path).map(({ line, obj }) => ({
    id: requireString(path, line, obj, "id"),
    question: requireString(path, line, obj, "question"),
  }));
  rejectDuplicates(path, rows.map((r) => r.id));
  return rows;
}
