import { beforeAll, describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { runExport } from "../src/export.js";
import { readEmbeddings, type EmbeddingRecord } from "../src/format.js";
import { supportedEncoders } from "../src/encoders.js";
import { SMOKE_SCENES, cosine, writeSmokeWorld } from "./scenes.js";

/** Twenty real PNG scenes with descriptive captions, pushed through the
 * built-in encoder end to end. Matched pairs must clear the consistency
 * screen's default threshold on average, and must beat mismatched
 * captions, or the cohesion numbers the attack trades against would be
 * meaningless. */
describe("twenty-pair smoke set", () => {
  let images: EmbeddingRecord[];
  let metas: EmbeddingRecord[];

  beforeAll(async () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "emb-smoke-"));
    const { manifestPath } = writeSmokeWorld(dir);
    await runExport({
      manifestPath,
      encoder: "pixelstat",
      outImages: path.join(dir, "img.emb"),
      outMeta: path.join(dir, "meta.emb"),
    });
    images = readEmbeddings(path.join(dir, "img.emb")).records;
    metas = readEmbeddings(path.join(dir, "meta.emb")).records;
  });

  it("covers twenty pairs with one supported encoder", () => {
    expect(SMOKE_SCENES).toHaveLength(20);
    expect(images).toHaveLength(20);
    expect(metas).toHaveLength(20);
    expect(supportedEncoders()).toContain("pixelstat");
  });

  it("clean image-caption cohesion mean exceeds 0.2", () => {
    const matched = images.map((img, i) => cosine(img.values, metas[i].values));
    const mean = matched.reduce((a, b) => a + b, 0) / matched.length;
    // eslint-disable-next-line no-console
    console.log(
      `matched cohesion: mean ${mean.toFixed(4)}, ` +
        `min ${Math.min(...matched).toFixed(4)}, max ${Math.max(...matched).toFixed(4)}`,
    );
    expect(mean).toBeGreaterThan(0.2);
  });

  it("matched captions beat a derangement of the same captions", () => {
    const matched = images.map((img, i) => cosine(img.values, metas[i].values));
    const shifted = images.map((img, i) =>
      cosine(img.values, metas[(i + 7) % metas.length].values),
    );
    const mean = (xs: number[]) => xs.reduce((a, b) => a + b, 0) / xs.length;
    // eslint-disable-next-line no-console
    console.log(
      `derangement cohesion mean ${mean(shifted).toFixed(4)} vs matched ${mean(matched).toFixed(4)}`,
    );
    expect(mean(matched)).toBeGreaterThan(mean(shifted) + 0.15);
  });

  it("every exported vector is self-similar after normalization", () => {
    for (const rec of [...images, ...metas]) {
      expect(Math.abs(cosine(rec.values, rec.values) - 1)).toBeLessThanOrEqual(1e-5);
    }
  });
});
