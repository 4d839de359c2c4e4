/** Minimal PNG reader for the built-in pixel-statistics encoder.
 *
 * Handles the common baseline subset: 8-bit depth, greyscale / RGB /
 * RGBA color, no interlacing, scanline filters 0 through 4. Pixels come
 * back as packed RGB rows. The scope is deliberately narrow; anything
 * outside it raises rather than guessing.
 *
 * A full image library would normally do this, but the usual native
 * packages (sharp and friends) fetch platform binaries from hosts this
 * environment cannot reach, so decoding lives here.
 */

import * as zlib from "node:zlib";

export interface RgbImage {
  width: number;
  height: number;
  /** Packed rows, 3 bytes per pixel. */
  pixels: Uint8Array;
}

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CHANNELS: Record<number, number> = { 0: 1, 2: 3, 6: 4 };

export function decodePng(data: Buffer): RgbImage {
  if (data.length < 8 || !data.subarray(0, 8).equals(SIGNATURE)) {
    throw new Error("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let colorType = -1;
  const idatParts: Buffer[] = [];
  let off = 8;
  let sawEnd = false;
  while (off + 8 <= data.length) {
    const length = data.readUInt32BE(off);
    const type = data.subarray(off + 4, off + 8).toString("ascii");
    const body = data.subarray(off + 8, off + 8 + length);
    off += 12 + length; // length + type + body + crc
    if (type === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      const bitDepth = body[8];
      colorType = body[9];
      const interlace = body[12];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (!(colorType in CHANNELS)) throw new Error(`unsupported color type ${colorType}`);
      if (interlace !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idatParts.push(body);
    } else if (type === "IEND") {
      sawEnd = true;
      break;
    }
    // ancillary chunks are skipped
  }
  if (!sawEnd) throw new Error("truncated PNG: no IEND chunk");
  if (width === 0 || height === 0) throw new Error("missing or empty IHDR");

  const channels = CHANNELS[colorType];
  const raw = zlib.inflateSync(Buffer.concat(idatParts));
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new Error(`decompressed size ${raw.length} does not match ${width}x${height}`);
  }

  const lines = unfilter(raw, height, stride, channels);
  const pixels = new Uint8Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const src = y * stride + x * channels;
      const dst = (y * width + x) * 3;
      if (channels === 1) {
        pixels[dst] = pixels[dst + 1] = pixels[dst + 2] = lines[src];
      } else {
        pixels[dst] = lines[src];
        pixels[dst + 1] = lines[src + 1];
        pixels[dst + 2] = lines[src + 2];
      }
    }
  }
  return { width, height, pixels };
}

function unfilter(raw: Buffer, height: number, stride: number, bpp: number): Uint8Array {
  const out = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const rowIn = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const rowOut = out.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    for (let i = 0; i < stride; i++) {
      const a = i >= bpp ? rowOut[i - bpp] : 0;
      const b = prev ? prev[i] : 0;
      const c = prev && i >= bpp ? prev[i - bpp] : 0;
      let v = rowIn[i];
      switch (filter) {
        case 0:
          break;
        case 1:
          v += a;
          break;
        case 2:
          v += b;
          break;
        case 3:
          v += (a + b) >> 1;
          break;
        case 4:
          v += paeth(a, b, c);
          break;
        default:
          throw new Error(`unknown scanline filter ${filter}`);
      }
      rowOut[i] = v & 0xff;
    }
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}
