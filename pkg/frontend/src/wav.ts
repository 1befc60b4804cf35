/** Minimal RIFF/WAVE reader for the 16 kHz mono PCM16 files the detector
 * consumes. Samples are scaled by 1/32767 to match the primary reader. */

import { readFileSync } from "node:fs";

export const SAMPLE_RATE = 16000;

export class RateError extends Error {}

export function readWav(path: string): Float64Array {
  const buf = readFileSync(path);
  if (buf.length < 12 || buf.toString("ascii", 0, 4) !== "RIFF" ||
      buf.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error(`${path}: not a RIFF/WAVE file`);
  }
  let fmt: { channels: number; rate: number; bits: number } | null = null;
  let data: Buffer | null = null;
  let off = 12;
  while (off + 8 <= buf.length) {
    const id = buf.toString("ascii", off, off + 4);
    const size = buf.readUInt32LE(off + 4);
    const body = buf.subarray(off + 8, off + 8 + size);
    if (id === "fmt ") {
      fmt = {
        channels: body.readUInt16LE(2),
        rate: body.readUInt32LE(4),
        bits: body.readUInt16LE(14),
      };
    } else if (id === "data") {
      data = Buffer.from(body);
    }
    off += 8 + size + (size % 2); // chunks are word-aligned
  }
  if (!fmt || !data) throw new Error(`${path}: missing fmt/data chunk`);
  if (fmt.rate !== SAMPLE_RATE) {
    throw new RateError(`${path}: sample rate ${fmt.rate}, expected ${SAMPLE_RATE}`);
  }
  if (fmt.channels !== 1) throw new RateError(`${path}: expected mono audio`);
  if (fmt.bits !== 16) throw new RateError(`${path}: expected 16-bit PCM`);
  const n = data.length >> 1;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = data.readInt16LE(2 * i) / 32767.0;
  return out;
}
