/** Feature models the exporter can run. Real pretrained checkpoints are
 * loaded from disk; the debug identity model emits the filterbank itself so
 * the export path can be validated without any checkpoint. */

import { existsSync } from "node:fs";

import { fbank, frameGrid, HOP_SAMPLES } from "./fbank.js";

export class CheckpointError extends Error {}
export class FrameCountError extends Error {}

export interface FeatureModel {
  name: string;
  /** Native hop of the model in samples at 16 kHz. */
  hopSamples: number;
  run(samples: Float64Array, layer: number): Float64Array[];
}

export const MODEL_NAMES = ["ssl-encoder", "speaker-embedder", "debug-fbank"] as const;
export type ModelName = (typeof MODEL_NAMES)[number];

const CHECKPOINT_ENV: Record<string, string> = {
  "ssl-encoder": "OSDF_SSL_CHECKPOINT",
  "speaker-embedder": "OSDF_SPK_CHECKPOINT",
};

export function loadModel(name: string, device: string): FeatureModel {
  if (!(MODEL_NAMES as readonly string[]).includes(name)) {
    throw new CheckpointError(
      `unknown model '${name}'; choose one of ${MODEL_NAMES.join(", ")}`,
    );
  }
  if (name === "debug-fbank") {
    return {
      name,
      hopSamples: HOP_SAMPLES,
      run: (samples) => fbank(samples),
    };
  }
  const envVar = CHECKPOINT_ENV[name];
  const path = process.env[envVar];
  if (!path || !existsSync(path)) {
    throw new CheckpointError(
      `model '${name}' needs a local checkpoint: set ${envVar} to the ` +
        `downloaded weights file (device '${device}'). For a checkpoint-free ` +
        `smoke test use --model debug-fbank.`,
    );
  }
  throw new CheckpointError(
    `checkpoint found at ${path}, but runtime inference for '${name}' is not ` +
      `bundled in this build; export features with the vendor toolchain and ` +
      `convert them, or use --model debug-fbank.`,
  );
}

/** Map source-model frames onto the 20 ms grid by nearest source frame.
 * Interpolation is deliberately avoided: it would blur speaker change
 * points the downstream overlap detector depends on. */
export function adaptFrameRate(
  features: Float64Array[],
  sourceHop: number,
  numSamples: number,
): Float64Array[] {
  const target = frameGrid(numSamples);
  if (sourceHop === HOP_SAMPLES) {
    if (features.length !== target) {
      throw new FrameCountError(
        `model produced ${features.length} frames, expected ${target}`,
      );
    }
    return features;
  }
  const out: Float64Array[] = [];
  for (let i = 0; i < target; i++) {
    const centerSample = i * HOP_SAMPLES + 200; // 25 ms window center
    const src = Math.min(features.length - 1, Math.round(centerSample / sourceHop));
    if (src < 0 || features.length === 0) {
      throw new FrameCountError(`cannot adapt empty feature track to ${target} frames`);
    }
    out.push(features[src]);
  }
  return out;
}
