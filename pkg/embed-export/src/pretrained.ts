/** Adapters for hub-hosted multimodal encoders via transformers.js.
 *
 * The dependency is an optional peer: format-only work should not pull
 * an ONNX runtime, so the import happens lazily on first use. Every way
 * the real stack can be absent (package not installed, checkpoint not
 * downloadable, family not ported to this runtime) surfaces as one
 * typed EncoderLoadFailure naming the reason.
 */

import { EncoderLoadFailure } from "./errors.js";
import type { Encoder, ImageItem } from "./encoders.js";

// Kept in a variable so bundlers and tsc treat the optional dependency
// as truly dynamic.
const MODULE = "@xenova/transformers";

async function importTransformers(family: string): Promise<any> {
  try {
    return await import(MODULE);
  } catch (err) {
    throw new EncoderLoadFailure(
      family,
      `optional dependency ${MODULE} is not installed ` +
        `(${err instanceof Error ? err.message : err})`,
    );
  }
}

export async function loadPretrained(
  family: string,
  checkpoint: string,
  deviceHint?: string,
): Promise<Encoder> {
  const t = await importTransformers(family);
  let tokenizer: any;
  let processor: any;
  let textModel: any;
  let visionModel: any;
  try {
    if (family === "flava") {
      // transformers.js has no FLAVA port; loading can only work once
      // one is published under this checkpoint name.
      throw new Error(`no ONNX port of ${checkpoint} is available in this runtime`);
    }
    tokenizer = await t.AutoTokenizer.from_pretrained(checkpoint);
    processor = await t.AutoProcessor.from_pretrained(checkpoint);
    if (family === "siglip") {
      textModel = await t.SiglipTextModel.from_pretrained(checkpoint, { quantized: false });
      visionModel = await t.SiglipVisionModel.from_pretrained(checkpoint, { quantized: false });
    } else {
      textModel = await t.CLIPTextModelWithProjection.from_pretrained(checkpoint, {
        quantized: true,
      });
      visionModel = await t.CLIPVisionModelWithProjection.from_pretrained(checkpoint, {
        quantized: true,
      });
    }
  } catch (err) {
    throw new EncoderLoadFailure(family, err instanceof Error ? err.message : String(err));
  }

  const cfg = textModel.config ?? {};
  const dim = Number(cfg.projection_dim ?? cfg.hidden_size ?? 0);
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new EncoderLoadFailure(family, `cannot determine embedding width of ${checkpoint}`);
  }

  return new PretrainedEncoder(family, checkpoint, dim, {
    transformers: t,
    tokenizer,
    processor,
    textModel,
    visionModel,
    deviceHint,
  });
}

class PretrainedEncoder implements Encoder {
  constructor(
    readonly family: string,
    readonly checkpoint: string,
    readonly dim: number,
    private readonly stack: any,
  ) {}

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    const { tokenizer, textModel } = this.stack;
    const inputs = tokenizer(texts, { padding: true, truncation: true });
    const out = await textModel(inputs);
    return splitRows(out.text_embeds ?? out.pooler_output, texts.length, this.dim);
  }

  async encodeImages(items: ImageItem[]): Promise<Float32Array[]> {
    const { transformers, processor, visionModel } = this.stack;
    const images = await Promise.all(items.map((it) => transformers.RawImage.read(it.path)));
    const inputs = await processor(images);
    const out = await visionModel(inputs);
    return splitRows(out.image_embeds ?? out.pooler_output, items.length, this.dim);
  }
}

function splitRows(tensor: any, n: number, dim: number): Float32Array[] {
  const data: Float32Array = tensor.data;
  if (data.length !== n * dim) {
    throw new Error(`model returned ${data.length} values, expected ${n}x${dim}`);
  }
  const rows: Float32Array[] = [];
  for (let i = 0; i < n; i++) {
    rows.push(data.slice(i * dim, (i + 1) * dim));
  }
  return rows;
}
