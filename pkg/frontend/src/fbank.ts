/** Log-mel filterbank front end on the 25 ms / 20 ms grid, numerically
 * mirroring the detector's Python implementation (same window, FFT size,
 * mel edges, and log floor) so the debug-identity export matches it. */

export const SAMPLE_RATE = 16000;
export const WIN_SAMPLES = 400;
export const HOP_SAMPLES = 320;
export const N_FFT = 512;
export const N_MELS = 80;
export const MEL_FMIN = 20.0;
export const MEL_FMAX = 7600.0;
export const LOG_FLOOR = 1e-10;

export function frameGrid(numSamples: number): number {
  if (numSamples < WIN_SAMPLES) return 0;
  return Math.floor((numSamples - WIN_SAMPLES) / HOP_SAMPLES) + 1;
}

const hzToMel = (f: number) => 2595.0 * Math.log10(1.0 + f / 700.0);
const melToHz = (m: number) => 700.0 * (Math.pow(10.0, m / 2595.0) - 1.0);

export function melFilterbank(): Float64Array[] {
  const melLo = hzToMel(MEL_FMIN);
  const melHi = hzToMel(MEL_FMAX);
  const bins = new Array<number>(N_MELS + 2);
  for (let i = 0; i < N_MELS + 2; i++) {
    const mel = melLo + ((melHi - melLo) * i) / (N_MELS + 1);
    bins[i] = Math.floor(((N_FFT + 1) * melToHz(mel)) / SAMPLE_RATE);
  }
  const fb: Float64Array[] = [];
  for (let m = 1; m <= N_MELS; m++) {
    const row = new Float64Array(N_FFT / 2 + 1);
    const [lo, c, hi] = [bins[m - 1], bins[m], bins[m + 1]];
    for (let k = lo; k < c; k++) if (c > lo) row[k] = (k - lo) / (c - lo);
    for (let k = c; k < hi; k++) if (hi > c) row[k] = (hi - k) / (hi - c);
    fb.push(row);
  }
  return fb;
}

/** In-place iterative radix-2 FFT over interleaved re/im pairs. */
function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wRe = Math.cos(ang);
    const wIm = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let curRe = 1.0;
      let curIm = 0.0;
      for (let k = 0; k < len / 2; k++) {
        const a = i + k;
        const b = i + k + len / 2;
        const tRe = re[b] * curRe - im[b] * curIm;
        const tIm = re[b] * curIm + im[b] * curRe;
        re[b] = re[a] - tRe;
        im[b] = im[a] - tIm;
        re[a] += tRe;
        im[a] += tIm;
        const nextRe = curRe * wRe - curIm * wIm;
        curIm = curRe * wIm + curIm * wRe;
        curRe = nextRe;
      }
    }
  }
}

let cachedWindow: Float64Array | null = null;
let cachedFb: Float64Array[] | null = null;

function hannWindow(): Float64Array {
  if (!cachedWindow) {
    cachedWindow = new Float64Array(WIN_SAMPLES);
    for (let i = 0; i < WIN_SAMPLES; i++) {
      cachedWindow[i] = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / (WIN_SAMPLES - 1));
    }
  }
  return cachedWindow;
}

/** Log-mel energies, one Float64Array of length N_MELS per frame. */
export function fbank(samples: Float64Array): Float64Array[] {
  const t = frameGrid(samples.length);
  const window = hannWindow();
  if (!cachedFb) cachedFb = melFilterbank();
  const out: Float64Array[] = [];
  const re = new Float64Array(N_FFT);
  const im = new Float64Array(N_FFT);
  for (let fr = 0; fr < t; fr++) {
    re.fill(0);
    im.fill(0);
    const base = fr * HOP_SAMPLES;
    for (let i = 0; i < WIN_SAMPLES; i++) re[i] = samples[base + i] * window[i];
    fft(re, im);
    const power = new Float64Array(N_FFT / 2 + 1);
    for (let k = 0; k <= N_FFT / 2; k++) power[k] = re[k] * re[k] + im[k] * im[k];
    const row = new Float64Array(N_MELS);
    for (let m = 0; m < N_MELS; m++) {
      let acc = 0.0;
      const filt = cachedFb[m];
      for (let k = 0; k <= N_FFT / 2; k++) acc += power[k] * filt[k];
      row[m] = Math.log(Math.max(acc, LOG_FLOOR));
    }
    out.push(row);
  }
  return out;
}
