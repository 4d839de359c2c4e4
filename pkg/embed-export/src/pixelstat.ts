/** Built-in deterministic encoder: pixel statistics for images, a color
 * and texture lexicon for text, sharing one feature space.
 *
 * The first axes carry visual properties both modalities can express:
 * hue-family mass, neutral mass, brightness, darkness, saturation, edge
 * density. Images fill them from actual decoded pixels; captions fill
 * them through a word lexicon ("crimson" lands on the red axis). The
 * remaining axes hold hashed caption tokens, giving unrelated texts
 * distinct directions; images never touch them. Matching image/caption
 * pairs therefore score well above mismatched ones, with no model
 * weights and no nondeterminism.
 *
 * Vectors are emitted unnormalized; the consumer normalizes.
 */

import * as fs from "node:fs";
import { ImageDecodeError } from "./errors.js";
import { decodePng } from "./png.js";

export const PIXELSTAT_DIM = 48;
export const PIXELSTAT_CHECKPOINT = "builtin:pixelstat-v1";

// Shared-space axes. 0-5 hue families at 60-degree sectors, 6-8
// neutrals, 9-12 scalar statistics, 13 text-presence floor, 14+ hashed
// token tail (text only).
const RED = 0;
const YELLOW = 1;
const GREEN = 2;
const CYAN = 3;
const BLUE = 4;
const MAGENTA = 5;
const WHITE = 6;
const GREY = 7;
const BLACK = 8;
const BRIGHT = 9;
const DARK = 10;
const VIVID = 11;
const EDGES = 12;
const TEXT_FLOOR = 13;
const TAIL_START = 14;
const TAIL_AXES = PIXELSTAT_DIM - TAIL_START;

// Keeps empty text encodable: normalization needs a nonzero vector.
const TEXT_FLOOR_VALUE = 0.01;
// Non-lexicon tokens matter for text-text geometry but say nothing
// about pixels, so they get less mass than visual words.
const TAIL_WEIGHT = 0.5;

type AxisWeights = ReadonlyArray<readonly [number, number]>;

const LEXICON: Record<string, AxisWeights> = {};

function lex(words: string, weights: AxisWeights): void {
  for (const w of words.split(" ")) LEXICON[w] = weights;
}

lex("red crimson scarlet ruby", [[RED, 1]]);
lex("orange amber", [
  [RED, 0.5],
  [YELLOW, 0.5],
]);
lex("yellow gold golden", [[YELLOW, 1]]);
lex("green emerald olive grassy", [[GREEN, 1]]);
lex("cyan teal turquoise aqua", [[CYAN, 1]]);
lex("blue azure navy cobalt", [[BLUE, 1]]);
lex("purple violet", [
  [BLUE, 0.5],
  [MAGENTA, 0.5],
]);
lex("magenta pink rose", [[MAGENTA, 1]]);
lex("brown tan earthen", [
  [RED, 0.4],
  [YELLOW, 0.3],
  [BLACK, 0.3],
]);
lex("white snowy ivory", [[WHITE, 1]]);
lex("grey gray silver ashen", [[GREY, 1]]);
lex("black ebony charcoal", [[BLACK, 1]]);
lex("bright light sunlit glowing luminous", [[BRIGHT, 1]]);
lex("pale", [
  [BRIGHT, 0.7],
  [GREY, 0.3],
]);
lex("dark dim shadowy dusky gloomy", [[DARK, 1]]);
lex("vivid colorful saturated", [[VIVID, 1]]);
lex("striped stripes checkered checker chequered textured busy patterned grid noisy", [
  [EDGES, 1],
]);

const STOPWORDS = new Set(
  "a an the of on in at under over above below and or with by to is are".split(" "),
);

export function encodeText(text: string): Float32Array {
  const vec = new Float32Array(PIXELSTAT_DIM);
  vec[TEXT_FLOOR] = TEXT_FLOOR_VALUE;
  for (const token of tokenize(text)) {
    const entry = LEXICON[token];
    if (entry) {
      for (const [axis, weight] of entry) vec[axis] += weight;
    } else if (!STOPWORDS.has(token)) {
      vec[TAIL_START + (fnv1a(token) % TAIL_AXES)] += TAIL_WEIGHT;
    }
  }
  return vec;
}

export function encodeImageFile(entryId: string, path: string): Float32Array {
  let data: Buffer;
  try {
    data = fs.readFileSync(path);
  } catch (err) {
    throw new ImageDecodeError(entryId, `cannot read ${path}: ${message(err)}`);
  }
  let img;
  try {
    img = decodePng(data);
  } catch (err) {
    throw new ImageDecodeError(entryId, `cannot decode ${path}: ${message(err)}`);
  }

  const { width, height, pixels } = img;
  const n = width * height;
  const vec = new Float32Array(PIXELSTAT_DIM);
  let valueSum = 0;
  let satSum = 0;
  for (let i = 0; i < n; i++) {
    const r = pixels[i * 3];
    const g = pixels[i * 3 + 1];
    const b = pixels[i * 3 + 2];
    const max = Math.max(r, g, b);
    const min = Math.min(r, g, b);
    const value = max / 255;
    const sat = max === 0 ? 0 : (max - min) / max;
    valueSum += value;
    satSum += sat;
    vec[classify(r, g, b, value, sat)] += 1;
  }
  for (let axis = RED; axis <= BLACK; axis++) vec[axis] /= n;
  vec[BRIGHT] = valueSum / n;
  vec[DARK] = 1 - valueSum / n;
  vec[VIVID] = satSum / n;
  vec[EDGES] = edgeDensity(img);
  return vec;
}

function classify(r: number, g: number, b: number, value: number, sat: number): number {
  if (value < 0.18) return BLACK;
  if (sat < 0.16) return value > 0.8 ? WHITE : GREY;
  return RED + (Math.round(hueDegrees(r, g, b) / 60) % 6);
}

function hueDegrees(r: number, g: number, b: number): number {
  const max = Math.max(r, g, b);
  const min = Math.min(r, g, b);
  const d = max - min;
  let h: number;
  if (max === r) h = ((g - b) / d) % 6;
  else if (max === g) h = (b - r) / d + 2;
  else h = (r - g) / d + 4;
  h *= 60;
  return h < 0 ? h + 360 : h;
}

function edgeDensity({ width, height, pixels }: { width: number; height: number; pixels: Uint8Array }): number {
  if (width < 2 && height < 2) return 0;
  let total = 0;
  let count = 0;
  const lum = (i: number) =>
    (0.299 * pixels[i * 3] + 0.587 * pixels[i * 3 + 1] + 0.114 * pixels[i * 3 + 2]) / 255;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const here = lum(y * width + x);
      if (x + 1 < width) {
        total += Math.abs(lum(y * width + x + 1) - here);
        count++;
      }
      if (y + 1 < height) {
        total += Math.abs(lum((y + 1) * width + x) - here);
        count++;
      }
    }
  }
  // Gradients are sparse even in busy scenes; gain keeps the axis
  // comparable to the mass axes without letting it saturate.
  return Math.min(1, (3 * total) / count);
}

function tokenize(text: string): string[] {
  return text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
}

function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h;
}

function message(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
