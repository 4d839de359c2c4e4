/** Encoder registry: family name -> something that embeds images and
 * texts into one space.
 *
 * Pretrained families resolve to hub checkpoints and need the optional
 * `@xenova/transformers` dependency plus downloadable weights; the
 * built-in `pixelstat` family runs anywhere and keeps CI deterministic.
 * Unknown names fail fast with the supported list.
 */

import { UnknownEncoder } from "./errors.js";
import {
  PIXELSTAT_CHECKPOINT,
  PIXELSTAT_DIM,
  encodeImageFile,
  encodeText,
} from "./pixelstat.js";
import { loadPretrained } from "./pretrained.js";

export interface ImageItem {
  id: string;
  path: string;
}

export interface Encoder {
  readonly family: string;
  /** Checkpoint variant actually in use; recorded in export metadata. */
  readonly checkpoint: string;
  readonly dim: number;
  encodeTexts(texts: string[]): Promise<Float32Array[]>;
  encodeImages(items: ImageItem[]): Promise<Float32Array[]>;
}

export const CHECKPOINTS: Record<string, string> = {
  pixelstat: PIXELSTAT_CHECKPOINT,
  clip: "Xenova/clip-vit-base-patch32",
  flava: "facebook/flava-full",
  openclip: "laion/CLIP-ViT-B-32-laion2B-s34B-b79K",
  siglip: "Xenova/siglip-base-patch16-224",
};

export function supportedEncoders(): string[] {
  return Object.keys(CHECKPOINTS);
}

class PixelStatEncoder implements Encoder {
  readonly family = "pixelstat";
  readonly checkpoint = PIXELSTAT_CHECKPOINT;
  readonly dim = PIXELSTAT_DIM;

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map(encodeText);
  }

  async encodeImages(items: ImageItem[]): Promise<Float32Array[]> {
    return items.map((it) => encodeImageFile(it.id, it.path));
  }
}

export async function loadEncoder(name: string, deviceHint?: string): Promise<Encoder> {
  const checkpoint = CHECKPOINTS[name];
  if (checkpoint === undefined) {
    throw new UnknownEncoder(name, supportedEncoders());
  }
  if (name === "pixelstat") {
    return new PixelStatEncoder();
  }
  return loadPretrained(name, checkpoint, deviceHint);
}
