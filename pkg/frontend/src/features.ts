/**
 * Feature construction shared by the stub and endpoint paths.
 *
 * Per sample: each instruction yields decoder token features (real model or
 * stub), the tokens are mean-pooled into one vector per instruction, the
 * per-instruction vectors are concatenated in instruction order, and the
 * result is unified to the table dimension with the same rule the training
 * side applies (truncate or zero-pad, then L2-normalize).
 */

import { createHash } from "node:crypto";

/** Questions asked about every composite image, in this order. */
export const DEFAULT_INSTRUCTIONS = [
  "Are the hands touching the head?",
  "Are the hands touching the foot?",
  "Is the person holding an object?",
];

export const DEFAULT_DIM = 32;

/** Dimension of one (stub) token feature vector. */
export const STUB_TOKEN_DIM = 12;

function hashToUnits(key: string, count: number): Float64Array {
  // sha256 in counter mode; each 4-byte word becomes a float in [-0.5, 0.5)
  const out = new Float64Array(count);
  let filled = 0;
  for (let block = 0; filled < count; block++) {
    const digest = createHash("sha256").update(`${key}#${block}`).digest();
    for (let off = 0; off + 4 <= digest.length && filled < count; off += 4) {
      out[filled++] = digest.readUInt32LE(off) / 2 ** 32 - 0.5;
    }
  }
  return out;
}

/**
 * Deterministic stand-in for decoder token features: the token count and
 * every value derive from sha256 of (seed, sample id, instruction).
 */
export function stubTokenFeatures(
  sampleId: string,
  instruction: string,
  seed: number
): Float64Array[] {
  const key = `${seed}|${sampleId}|${instruction}`;
  const count = 4 + (createHash("sha256").update(key).digest()[0] % 4);
  const tokens: Float64Array[] = [];
  for (let t = 0; t < count; t++) {
    tokens.push(hashToUnits(`${key}|token${t}`, STUB_TOKEN_DIM));
  }
  return tokens;
}

export function meanPoolTokens(tokens: Float64Array[]): Float64Array {
  if (tokens.length === 0) {
    throw new Error("cannot pool an empty token list");
  }
  const dim = tokens[0].length;
  const out = new Float64Array(dim);
  for (const tok of tokens) {
    if (tok.length !== dim) {
      throw new Error(`ragged token features: ${tok.length} vs ${dim}`);
    }
    for (let i = 0; i < dim; i++) out[i] += tok[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= tokens.length;
  return out;
}

/** Truncate or zero-pad to length n, then L2-normalize (training-side rule). */
export function unifyFeatures(raw: Float64Array, n: number): Float64Array {
  if (raw.length === 0) {
    throw new Error("cannot unify an empty feature vector");
  }
  if (n < 1) {
    throw new Error(`unified dimension must be >= 1, got ${n}`);
  }
  const out = new Float64Array(n);
  out.set(raw.subarray(0, Math.min(n, raw.length)));
  let sq = 0;
  for (let i = 0; i < n; i++) sq += out[i] * out[i];
  const norm = Math.sqrt(sq);
  if (norm > 0) {
    for (let i = 0; i < n; i++) out[i] /= norm;
  }
  return out;
}

/** Pooled vectors for each instruction, concatenated, unified to `dim`. */
export function combineInstructionFeatures(
  perInstruction: Float64Array[],
  dim: number
): Float64Array {
  const total = perInstruction.reduce((acc, v) => acc + v.length, 0);
  const raw = new Float64Array(total);
  let off = 0;
  for (const vec of perInstruction) {
    raw.set(vec, off);
    off += vec.length;
  }
  return unifyFeatures(raw, dim);
}

/** Full stub path for one sample: tokens -> pooled -> concat -> unified. */
export function stubFeatureVector(
  sampleId: string,
  instructions: string[],
  seed: number,
  dim: number
): Float64Array {
  const pooled = instructions.map((q) => meanPoolTokens(stubTokenFeatures(sampleId, q, seed)));
  return combineInstructionFeatures(pooled, dim);
}
