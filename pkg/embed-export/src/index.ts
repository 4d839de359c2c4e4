export { runExport, DEFAULT_BATCH_SIZE } from "./export.js";
export type { ExportJob, ExportResult } from "./export.js";
export { loadEncoder, supportedEncoders, CHECKPOINTS } from "./encoders.js";
export type { Encoder, ImageItem } from "./encoders.js";
export {
  encodeEmbeddings,
  writeEmbeddings,
  readEmbeddings,
  atomicWrite,
  MAGIC,
} from "./format.js";
export type { EmbeddingRecord } from "./format.js";
export { readKbManifest, readQueriesManifest } from "./manifest.js";
export type { KbRow, QueryRow } from "./manifest.js";
export { decodePng } from "./png.js";
export type { RgbImage } from "./png.js";
export {
  encodeText,
  encodeImageFile,
  PIXELSTAT_DIM,
  PIXELSTAT_CHECKPOINT,
} from "./pixelstat.js";
export {
  EncoderLoadFailure,
  ImageDecodeError,
  ManifestError,
  MissingImage,
  UnknownEncoder,
  WriteFailure,
} from "./errors.js";
