/**
 * Batch export of per-sample text features.
 *
 * Reads a dataset manifest, obtains one feature vector per sample (stub or
 * endpoint), and writes the `.mmct` feature tensor plus its `.ids` sibling.
 * Output row order always follows the manifest, regardless of the order in
 * which requests complete. Completed vectors are journaled to a sidecar
 * `.partial.jsonl` after every sample, so an interrupted run resumes without
 * re-querying finished samples — and without duplicating or reordering ids.
 */

import { promises as fs } from "node:fs";
import * as path from "node:path";

import { EndpointClient, EndpointConfig } from "./endpoint.js";
import {
  DEFAULT_DIM,
  DEFAULT_INSTRUCTIONS,
  combineInstructionFeatures,
  meanPoolTokens,
  stubFeatureVector,
} from "./features.js";
import { encodeIdList, encodeTensor2D, idsPathFor, writeFileAtomic } from "./tensorio.js";

export interface ManifestSample {
  id: string;
  label: number;
  skeleton: string;
  frames?: string;
  boxes?: string;
  text_id?: string;
}

export interface Manifest {
  parents: number[];
  classes: number;
  samples: ManifestSample[];
}

export async function loadManifest(file: string): Promise<Manifest> {
  let text: string;
  try {
    text = await fs.readFile(file, "utf-8");
  } catch {
    throw new Error(`manifest file not found: ${file}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new Error(`${file}: invalid manifest JSON (${err})`);
  }
  const m = doc as Manifest;
  for (const key of ["parents", "classes", "samples"] as const) {
    if (!(key in (m as object))) {
      throw new Error(`${file}: manifest missing required key '${key}'`);
    }
  }
  m.samples.forEach((s, i) => {
    for (const key of ["id", "label", "skeleton"] as const) {
      if (!(key in s)) {
        throw new Error(`${file}: sample ${i} missing required field '${key}'`);
      }
    }
  });
  return m;
}

/** Text-feature ids in manifest order: text_id when present, else the sample id. */
export function textIds(manifest: Manifest): string[] {
  return manifest.samples.map((s) => s.text_id ?? s.id);
}

export interface ExportOptions {
  manifestPath: string;
  outPath: string;
  instructions?: string[];
  seed?: number;
  dim?: number;
  mode?: "stub" | "endpoint";
  endpoint?: EndpointConfig;
  /** Endpoint mode: directory of per-sample composite images, `<id>.png`. */
  compositesDir?: string;
  /** Endpoint mode: parallel requests in flight (default 4). */
  concurrency?: number;
}

export interface ExportResult {
  ids: string[];
  written: number;
  /** How many vectors were taken from the journal instead of recomputed. */
  resumed: number;
  outPath: string;
}

function partialPathFor(outPath: string): string {
  return outPath + ".partial.jsonl";
}

async function readJournal(outPath: string): Promise<Map<string, Float64Array>> {
  const done = new Map<string, Float64Array>();
  let text: string;
  try {
    text = await fs.readFile(partialPathFor(outPath), "utf-8");
  } catch {
    return done;
  }
  for (const line of text.split("\n")) {
    if (line.trim() === "") continue;
    const rec = JSON.parse(line) as { id: string; values_base64: string };
    const raw = Buffer.from(rec.values_base64, "base64");
    const values = new Float64Array(raw.length / 8);
    for (let i = 0; i < values.length; i++) values[i] = raw.readDoubleLE(8 * i);
    done.set(rec.id, values);
  }
  return done;
}

function journalLine(id: string, values: Float64Array): string {
  const buf = Buffer.alloc(8 * values.length);
  for (let i = 0; i < values.length; i++) buf.writeDoubleLE(values[i], 8 * i);
  return JSON.stringify({ id, values_base64: buf.toString("base64") }) + "\n";
}

async function endpointVector(
  client: EndpointClient,
  compositesDir: string,
  id: string,
  instructions: string[],
  dim: number
): Promise<Float64Array> {
  const imagePath = path.join(compositesDir, `${id}.png`);
  let image: Buffer;
  try {
    image = await fs.readFile(imagePath);
  } catch {
    throw new Error(`composite image not found: ${imagePath}`);
  }
  const pooled: Float64Array[] = [];
  for (const instruction of instructions) {
    pooled.push(meanPoolTokens(await client.tokenFeatures(id, instruction, image)));
  }
  return combineInstructionFeatures(pooled, dim);
}

export async function generateTextFeatures(opts: ExportOptions): Promise<ExportResult> {
  const instructions = opts.instructions ?? DEFAULT_INSTRUCTIONS;
  if (instructions.length === 0) {
    throw new Error("need at least one instruction");
  }
  const seed = opts.seed ?? 0;
  const dim = opts.dim ?? DEFAULT_DIM;
  const mode = opts.mode ?? "stub";

  const manifest = await loadManifest(opts.manifestPath);
  const ids: string[] = [];
  for (const id of textIds(manifest)) {
    if (!ids.includes(id)) ids.push(id); // samples may share a text row
  }

  const done = await readJournal(opts.outPath);
  const pending = ids.filter((id) => !done.has(id));
  const resumed = ids.length - pending.length;

  if (mode === "stub") {
    for (const id of pending) {
      const vec = stubFeatureVector(id, instructions, seed, dim);
      await fs.appendFile(partialPathFor(opts.outPath), journalLine(id, vec));
      done.set(id, vec);
    }
  } else {
    if (!opts.endpoint?.url) {
      throw new Error("endpoint mode requires an endpoint url");
    }
    if (!opts.compositesDir) {
      throw new Error("endpoint mode requires a composites directory");
    }
    const client = new EndpointClient(opts.endpoint);
    const concurrency = Math.max(1, opts.concurrency ?? 4);
    let cursor = 0;
    const worker = async () => {
      while (cursor < pending.length) {
        const id = pending[cursor++];
        const vec = await endpointVector(client, opts.compositesDir!, id, instructions, dim);
        await fs.appendFile(partialPathFor(opts.outPath), journalLine(id, vec));
        done.set(id, vec);
      }
    };
    try {
      await Promise.all(Array.from({ length: concurrency }, worker));
    } catch (err) {
      const completed = ids.filter((id) => done.has(id));
      throw new Error(
        `${err instanceof Error ? err.message : err}; ` +
          `journaled ${completed.length}/${ids.length} ids (rerun to resume): ` +
          completed.sort().join(", ")
      );
    }
  }

  const data = new Float64Array(ids.length * dim);
  ids.forEach((id, row) => {
    const vec = done.get(id)!;
    if (vec.length !== dim) {
      throw new Error(`journaled vector for '${id}' has length ${vec.length}, expected ${dim}`);
    }
    data.set(vec, row * dim);
  });
  await writeFileAtomic(opts.outPath, encodeTensor2D({ rows: ids.length, cols: dim, data }));
  await writeFileAtomic(idsPathFor(opts.outPath), encodeIdList(ids));
  await fs.rm(partialPathFor(opts.outPath), { force: true });
  return { ids, written: ids.length, resumed, outPath: opts.outPath };
}
