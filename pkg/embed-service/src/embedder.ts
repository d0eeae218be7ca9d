import { createHash } from "node:crypto";

export interface EmbedModel {
  name: string;
  dim: number;
  embed(texts: string[]): number[][];
}

/**
 * Deterministic feature-hash encoder, wire-compatible with the pipeline's
 * in-core fallback: each whitespace token is bucketed by the first 8 bytes
 * of its sha256 digest (big-endian, modulo the dimension) and the count
 * vector is L2-normalized.
 *
 * A text with no tokens embeds to the first basis vector so that every
 * response vector is unit length, which lets clients rank by dot product.
 */
export function featureHashModel(dim = 384): EmbedModel {
  if (!Number.isInteger(dim) || dim < 1) {
    throw new Error(`dimension must be a positive integer, got ${dim}`);
  }
  return {
    name: `feature-hash-v1-${dim}`,
    dim,
    embed(texts: string[]): number[][] {
      return texts.map((text) => embedOne(text, dim));
    },
  };
}

function embedOne(text: string, dim: number): number[] {
  const vector = new Float64Array(dim);
  const tokens = text.split(/\s+/).filter((t) => t.length > 0);
  if (tokens.length === 0) {
    vector[0] = 1;
    return Array.from(vector);
  }
  for (const token of tokens) {
    const digest = createHash("sha256").update(token, "utf8").digest();
    const bucket = Number(BigInt("0x" + digest.subarray(0, 8).toString("hex")) % BigInt(dim));
    vector[bucket] += 1;
  }
  let sumSquares = 0;
  for (let i = 0; i < dim; i++) sumSquares += vector[i] * vector[i];
  const norm = Math.sqrt(sumSquares);
  for (let i = 0; i < dim; i++) vector[i] /= norm;
  return Array.from(vector);
}

const MODELS: Record<string, (dim: number) => EmbedModel> = {
  "feature-hash-v1": featureHashModel,
};

/** Look up a model family by name; the dimension comes from configuration. */
export function loadModel(name: string, dim: number): EmbedModel {
  const factory = MODELS[name];
  if (!factory) {
    throw new Error(`unknown model ${name}; available: ${Object.keys(MODELS).join(", ")}`);
  }
  return factory(dim);
}
