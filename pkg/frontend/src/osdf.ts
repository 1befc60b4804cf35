/** OSDF frame-feature container: magic, version byte, u32 T, u32 D,
 * T*D little-endian f32 row-major, JSON trailer, u32 trailer length. */

import { readFileSync, writeFileSync } from "node:fs";

export const FEATURE_MAGIC = "OSDF";
export const FEATURE_VERSION = 1;

export interface OsdfTrailer {
  source_model: string;
  frame_shift_ms: number;
  [key: string]: unknown;
}

export function encodeFeatures(features: Float64Array[], trailer: OsdfTrailer): Buffer {
  const t = features.length;
  const d = t > 0 ? features[0].length : 0;
  const header = Buffer.alloc(4 + 1 + 8);
  header.write(FEATURE_MAGIC, 0, "ascii");
  header.writeUInt8(FEATURE_VERSION, 4);
  header.writeUInt32LE(t, 5);
  header.writeUInt32LE(d, 9);
  const body = Buffer.alloc(4 * t * d);
  for (let i = 0; i < t; i++) {
    if (features[i].length !== d) {
      throw new Error(`row ${i} has ${features[i].length} dims, expected ${d}`);
    }
    for (let j = 0; j < d; j++) body.writeFloatLE(features[i][j], 4 * (i * d + j));
  }
  // sorted keys so reruns are byte-identical regardless of insertion order
  const sorted = Object.fromEntries(
    Object.entries(trailer).sort(([a], [b]) => (a < b ? -1 : 1)),
  );
  const blob = Buffer.from(JSON.stringify(sorted), "utf-8");
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(blob.length, 0);
  return Buffer.concat([header, body, blob, tail]);
}

export function writeFeatures(path: string, features: Float64Array[], trailer: OsdfTrailer): void {
  writeFileSync(path, encodeFeatures(features, trailer));
}

export function readFeatures(path: string): { features: Float64Array[]; trailer: OsdfTrailer } {
  const buf = readFileSync(path);
  if (buf.toString("ascii", 0, 4) !== FEATURE_MAGIC) {
    throw new Error(`${path}: bad feature file magic`);
  }
  if (buf.readUInt8(4) !== FEATURE_VERSION) {
    throw new Error(`${path}: unsupported feature file version ${buf.readUInt8(4)}`);
  }
  const t = buf.readUInt32LE(5);
  const d = buf.readUInt32LE(9);
  const features: Float64Array[] = [];
  for (let i = 0; i < t; i++) {
    const row = new Float64Array(d);
    for (let j = 0; j < d; j++) row[j] = buf.readFloatLE(13 + 4 * (i * d + j));
    features.push(row);
  }
  const trailerLen = buf.readUInt32LE(buf.length - 4);
  const start = 13 + 4 * t * d;
  const trailer = JSON.parse(buf.toString("utf-8", start, start + trailerLen));
  return { features, trailer };
}
