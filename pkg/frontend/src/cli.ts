#!/usr/bin/env node
/** osdf-export: run a feature model over a manifest of 16 kHz waveforms and
 * write one OSDF file per session plus an index.json. */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { basename, join } from "node:path";
import { parseArgs } from "node:util";

import { adaptFrameRate, CheckpointError, FrameCountError, loadModel } from "./models.js";
import { writeFeatures } from "./osdf.js";
import { readWav, RateError } from "./wav.js";

interface ManifestRow {
  audio_path: string;
  [key: string]: unknown;
}

export function readManifest(path: string): ManifestRow[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as ManifestRow);
}

export interface ExportJob {
  manifest: string;
  model: string;
  out: string;
  device: string;
  layer: number;
}

export function exportFeatures(job: ExportJob): string[] {
  const model = loadModel(job.model, job.device);
  mkdirSync(job.out, { recursive: true });
  const written: string[] = [];
  for (const row of readManifest(job.manifest)) {
    const samples = readWav(row.audio_path);
    const native = model.run(samples, job.layer);
    const adapted = adaptFrameRate(native, model.hopSamples, samples.length);
    const sid = basename(row.audio_path).replace(/\.wav$/, "");
    const outPath = join(job.out, `${sid}.osdf`);
    writeFeatures(outPath, adapted, {
      source_model: model.name,
      frame_shift_ms: 20.0,
      adaptation: "nearest-frame",
      layer: job.layer,
    });
    written.push(outPath);
  }
  const index = written.map((p) => ({ feature_path: p }));
  writeFileSync(
    join(job.out, "index.json"),
    JSON.stringify(index, null, 2) + "\n",
  );
  return written;
}

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        manifest: { type: "string" },
        model: { type: "string", default: "ssl-encoder" },
        out: { type: "string" },
        device: { type: "string", default: "cpu" },
        layer: { type: "string", default: "-1" },
      },
    }));
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 2;
  }
  if (!values.manifest || !values.out) {
    console.error("usage: osdf-export --manifest FILE --out DIR [--model NAME] [--device DEV] [--layer N]");
    return 2;
  }
  try {
    const written = exportFeatures({
      manifest: values.manifest,
      model: values.model!,
      out: values.out,
      device: values.device!,
      layer: parseInt(values.layer!, 10),
    });
    console.log(`wrote ${written.length} OSDF files to ${values.out}`);
    return 0;
  } catch (e) {
    if (e instanceof CheckpointError) {
      console.error(`error: ${e.message}`);
      return 2;
    }
    if (e instanceof FrameCountError || e instanceof RateError) {
      console.error(`error: ${e.message}`);
      return 1;
    }
    throw e;
  }
}

if (process.argv[1] && basename(process.argv[1]).startsWith("cli")) {
  process.exit(main(process.argv.slice(2)));
}
