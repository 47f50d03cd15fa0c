#!/usr/bin/env node
/**
 * Command-line front end for the text-feature exporter.
 *
 * Minimal run (deterministic stub features, no network):
 *
 *   export-text-features --manifest data/train_manifest.json --out features.mmct
 *
 * Against a live captioning endpoint, with composite images on disk:
 *
 *   export-text-features --manifest ... --out features.mmct \
 *     --mode endpoint --endpoint http://host:8000/describe --composites imgs/
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { generateTextFeatures } from "./exporter.js";

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .usage("$0 --manifest <json> --out <mmct> [options]")
    .option("manifest", {
      type: "string",
      demandOption: true,
      describe: "dataset manifest JSON",
    })
    .option("out", {
      type: "string",
      demandOption: true,
      describe: "output feature tensor (.mmct); ids land next to it as .ids",
    })
    .option("mode", {
      choices: ["stub", "endpoint"] as const,
      default: "stub" as const,
      describe: "stub: deterministic hash features; endpoint: query a captioner",
    })
    .option("instruction", {
      type: "string",
      array: true,
      describe: "prompt(s) posed per sample (default: the built-in three)",
    })
    .option("seed", {
      type: "number",
      default: 0,
      describe: "stub mode: seed mixed into every hashed feature",
    })
    .option("dim", {
      type: "number",
      default: 32,
      describe: "feature width per sample after pooling and unification",
    })
    .option("endpoint", {
      type: "string",
      default: process.env.TEXT_FEATURE_ENDPOINT,
      describe: "endpoint mode: captioner URL (or TEXT_FEATURE_ENDPOINT)",
    })
    .option("composites", {
      type: "string",
      describe: "endpoint mode: directory holding <sample-id>.png composites",
    })
    .option("concurrency", {
      type: "number",
      default: 4,
      describe: "endpoint mode: parallel requests in flight",
    })
    .option("attempts", {
      type: "number",
      default: 3,
      describe: "endpoint mode: tries per request before giving up",
    })
    .strict()
    .help()
    .parse();

  const result = await generateTextFeatures({
    manifestPath: argv.manifest,
    outPath: argv.out,
    instructions: argv.instruction,
    seed: argv.seed,
    dim: argv.dim,
    mode: argv.mode,
    endpoint: argv.endpoint ? { url: argv.endpoint, attempts: argv.attempts } : undefined,
    compositesDir: argv.composites,
    concurrency: argv.concurrency,
  });
  const note = result.resumed > 0 ? ` (${result.resumed} resumed from journal)` : "";
  console.log(`wrote ${result.written} feature rows${note} -> ${result.outPath}`);
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : String(err));
  process.exit(1);
});
