/** Failure vocabulary for the export pipeline.
 *
 * Each class marks a distinct recovery path: ManifestError and
 * MissingImage mean the input data is wrong, EncoderLoadFailure means
 * the environment lacks a model, WriteFailure means the output location
 * rejected us. The CLI maps them to distinct exit codes.
 */

export class ManifestError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ManifestError";
  }
}

export class MissingImage extends Error {
  readonly entryId: string;

  constructor(entryId: string, path: string) {
    super(`entry ${JSON.stringify(entryId)}: image not found at ${path}`);
    this.name = "MissingImage";
    this.entryId = entryId;
  }
}

export class ImageDecodeError extends Error {
  readonly entryId: string;

  constructor(entryId: string, reason: string) {
    super(`entry ${JSON.stringify(entryId)}: ${reason}`);
    this.name = "ImageDecodeError";
    this.entryId = entryId;
  }
}

export class EncoderLoadFailure extends Error {
  constructor(family: string, reason: string) {
    super(`encoder ${JSON.stringify(family)} failed to load: ${reason}`);
    this.name = "EncoderLoadFailure";
  }
}

export class UnknownEncoder extends Error {
  constructor(name: string, supported: readonly string[]) {
    super(
      `unknown encoder ${JSON.stringify(name)}; supported: ${supported.join(", ")}`,
    );
    this.name = "UnknownEncoder";
  }
}

export class WriteFailure extends Error {
  constructor(path: string, cause: unknown) {
    super(`failed to write ${path}: ${cause instanceof Error ? cause.message : cause}`);
    this.name = "WriteFailure";
  }
}
