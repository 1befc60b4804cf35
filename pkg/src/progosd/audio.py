"""Synthetic conversation generation and filterbank front end.

Everything lives on one time base: 16 kHz samples, 25 ms analysis windows,
20 ms hop. Sessions are pure functions of (spec, seed).
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
WIN_SAMPLES = 400   # 25 ms
HOP_SAMPLES = 320   # 20 ms
FRAME_SHIFT_S = 0.02
FRAME_CENTER_OFFSET_S = 0.0125  # half of the 25 ms window
N_FFT = 512
N_MELS = 80
MEL_FMIN = 20.0
MEL_FMAX = 7600.0
LOG_FLOOR = 1e-10


class RateError(ValueError):
    """Input is not 16 kHz; resampling is deliberately unsupported."""


class EmptyGridError(ValueError):
    """Waveform shorter than one analysis window."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise RateError(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SegmentAnnotation:
    entries: list = field(default_factory=list)  # (speaker_id, onset_s, duration_s)

    def add(self, speaker_id: str, onset: float, duration: float):
        assert onset >= 0 and duration > 0
        self.entries.append((speaker_id, float(onset), float(duration)))

    def speakers(self):
        return sorted({s for s, _, _ in self.entries})


@dataclass
class MixSpec:
    num_speakers: int = 2
    target_overlap_ratio: float = 0.2
    session_seconds: float = 60.0
    gap_mean_seconds: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.num_speakers <= 8):
            raise ValueError(f"num_speakers must be in [2, 8], got {self.num_speakers}")
        if not (0.0 <= self.target_overlap_ratio < 1.0):
            raise ValueError(
                f"target_overlap_ratio must be in [0, 1), got {self.target_overlap_ratio}"
            )


def frame_grid(num_samples: int) -> int:
    """Number of 25 ms / 20 ms analysis frames covering num_samples."""
    if num_samples < WIN_SAMPLES:
        raise EmptyGridError(
            f"need at least {WIN_SAMPLES} samples for one frame, got {num_samples}"
        )
    return (num_samples - WIN_SAMPLES) // HOP_SAMPLES + 1


def _speaker_rng(speaker_id: str, seed: int) -> np.random.Generator:
    mix = np.frombuffer(speaker_id.encode() + b"\x00" + struct.pack("<q", seed),
                        dtype=np.uint8)
    return np.random.default_rng([int(b) for b in mix])


def speaker_profile(speaker_id: str, seed: int) -> dict:
    """Stable per-speaker voice description: fundamental plus formant bands."""
    rng = _speaker_rng(speaker_id, seed)
    return {
        "f0": float(rng.uniform(90.0, 280.0)),
        "formants": [float(rng.uniform(300.0, 3500.0)) for _ in range(3)],
        "bandwidths": [float(rng.uniform(80.0, 250.0)) for _ in range(3)],
        "noise_gain": float(rng.uniform(0.01, 0.03)),
    }


def synth_speaker_source(speaker_id: str, duration: float, seed: int) -> Waveform:
    """Harmonic source with speaker-specific formant shaping; deterministic."""
    assert duration > 0
    prof = speaker_profile(speaker_id, seed)
    rng = _speaker_rng(speaker_id + ":wave", seed)
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = prof["f0"]
    # slow vibrato keeps the signal from being perfectly periodic
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * 4.5 * t + rng.uniform(0, 2 * np.pi))
    out = np.zeros(n)
    n_harm = int(MEL_FMAX // f0)
    for k in range(1, min(n_harm, 40) + 1):
        fk = k * f0
        gain = 0.0
        for fc, bw in zip(prof["formants"], prof["bandwidths"]):
            gain += np.exp(-0.5 * ((fk - fc) / bw) ** 2)
        gain += 0.05 / k
        phase = rng.uniform(0, 2 * np.pi)
        out += gain * np.sin(2 * np.pi * fk * t * vibrato + phase)
    out += prof["noise_gain"] * rng.standard_normal(n)
    # syllable-ish amplitude modulation
    am = 0.7 + 0.3 * np.sin(2 * np.pi * 3.1 * t + rng.uniform(0, 2 * np.pi))
    out *= am
    peak = np.max(np.abs(out))
    if peak > 0:
        out /= peak
    return Waveform(out, id=speaker_id)


def overlap_ratio(annotation: SegmentAnnotation, num_frames: int) -> float:
    """Overlapped speech frames / speech frames, on the shared frame grid."""
    counts = rasterize_counts(annotation, num_frames)
    speech = int((counts >= 1).sum())
    if speech == 0:
        return 0.0
    return int((counts >= 2).sum()) / speech


def rasterize_counts(annotation: SegmentAnnotation, num_frames: int) -> np.ndarray:
    """Active-speaker count at each frame center."""
    centers = np.arange(num_frames) * FRAME_SHIFT_S + FRAME_CENTER_OFFSET_S
    counts = np.zeros(num_frames, dtype=np.int64)
    for _, onset, dur in annotation.entries:
        counts += (centers >= onset) & (centers < onset + dur)
    return counts


def _fade(signal: np.ndarray, fade_samples: int = 160) -> np.ndarray:
    """10 ms raised-cosine edges so segment boundaries stay click-free."""
    n = len(signal)
    f = min(fade_samples, n // 2)
    if f > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(f) / f))
        signal = signal.copy()
        signal[:f] *= ramp
        signal[-f:] *= ramp[::-1]
    return signal


def mix_session(spec: MixSpec) -> tuple[Waveform, SegmentAnnotation]:
    """Place alternating-speaker utterances, steering realized overlap toward
    the target with a running controller, then mix and peak-normalize."""
    rng = np.random.default_rng([spec.seed, 0xA5])
    total_samples = int(round(spec.session_seconds * SAMPLE_RATE))
    mix = np.zeros(total_samples)
    ann = SegmentAnnotation()
    num_frames = frame_grid(total_samples)
    counts = np.zeros(num_frames, dtype=np.int64)
    centers = np.arange(num_frames) * FRAME_SHIFT_S + FRAME_CENTER_OFFSET_S

    speaker_ids = [f"spk{spec.seed}_{i}" for i in range(spec.num_speakers)]
    last_end = {s: 0.0 for s in speaker_ids}
    t_end = 0.0
    prev_speaker = None
    utt_idx = 0

    while True:
        dur = float(rng.uniform(1.0, 4.0))
        cands = [s for s in speaker_ids if s != prev_speaker]
        speaker = cands[int(rng.integers(len(cands)))]

        speech = int((counts >= 1).sum())
        ov = int((counts >= 2).sum())
        ratio = ov / speech if speech else 0.0

        if prev_speaker is not None and ratio < spec.target_overlap_ratio:
            # start inside the previous utterance
            back = min(dur, t_end) * float(rng.uniform(0.4, 0.9))
            onset = t_end - back
        else:
            onset = t_end + float(rng.exponential(spec.gap_mean_seconds))
        onset = max(onset, last_end[speaker])  # a speaker never overlaps itself
        if onset >= spec.session_seconds - 0.5:
            break
        dur = min(dur, spec.session_seconds - onset)
        if dur < 0.2:
            break

        src = synth_speaker_source(speaker, dur, spec.seed)
        gain = float(rng.uniform(0.5, 1.0))
        sig = _fade(gain * src.samples)
        a = int(round(onset * SAMPLE_RATE))
        mix[a:a + len(sig)] += sig[: total_samples - a]

        ann.add(speaker, onset, dur)
        counts += (centers >= onset) & (centers < onset + dur)
        last_end[speaker] = onset + dur
        t_end = max(t_end, onset + dur)
        prev_speaker = speaker
        utt_idx += 1

    peak = np.max(np.abs(mix))
    if peak > 1.0:
        mix /= peak
    return Waveform(mix, id=f"session{spec.seed}"), ann


# -- filterbank --------------------------------------------------------------

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank() -> np.ndarray:
    """(N_MELS, N_FFT//2+1) triangular filters between MEL_FMIN and MEL_FMAX."""
    mel_pts = np.linspace(_hz_to_mel(MEL_FMIN), _hz_to_mel(MEL_FMAX), N_MELS + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bins = np.floor((N_FFT + 1) * hz_pts / SAMPLE_RATE).astype(int)
    fb = np.zeros((N_MELS, N_FFT // 2 + 1))
    for m in range(1, N_MELS + 1):
        lo, c, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, c):
            if c > lo:
                fb[m - 1, k] = (k - lo) / (c - lo)
        for k in range(c, hi):
            if hi > c:
                fb[m - 1, k] = (hi - k) / (hi - c)
    return fb


def frame_signal(samples: np.ndarray) -> np.ndarray:
    """Stack the waveform into analysis frames, shape (frame_grid(n), 400)."""
    samples = np.asarray(samples, dtype=np.float64)
    t = frame_grid(len(samples))
    idx = np.arange(t)[:, None] * HOP_SAMPLES + np.arange(WIN_SAMPLES)[None, :]
    return samples[idx]


_MEL_FB = None


def fbank(x: Waveform) -> np.ndarray:
    """Log-mel energies, shape (frame_grid(n), 80), on the 25 ms / 20 ms grid."""
    global _MEL_FB
    if x.sample_rate != SAMPLE_RATE:
        raise RateError(f"fbank requires {SAMPLE_RATE} Hz input")
    n = len(x.samples)
    t = frame_grid(n)
    if _MEL_FB is None:
        _MEL_FB = mel_filterbank()
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WIN_SAMPLES) / (WIN_SAMPLES - 1))
    idx = np.arange(t)[:, None] * HOP_SAMPLES + np.arange(WIN_SAMPLES)[None, :]
    frames = x.samples[idx] * window
    spec = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = spec @ _MEL_FB.T
    return np.log(np.maximum(mel, LOG_FLOOR))


# -- on-disk formats ---------------------------------------------------------

def write_wav(path, wav: Waveform):
    data = np.clip(wav.samples, -1.0, 1.0)
    pcm = (data * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getframerate() != SAMPLE_RATE:
            raise RateError(
                f"{path}: sample rate {f.getframerate()}, expected {SAMPLE_RATE}"
            )
        if f.getnchannels() != 1:
            raise RateError(f"{path}: expected mono audio")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, id=str(path))


def write_rttm(path, session_id: str, annotation: SegmentAnnotation):
    with open(path, "w") as f:
        for speaker, onset, dur in sorted(annotation.entries, key=lambda e: e[1]):
            f.write(
                f"SPEAKER {session_id} 1 {onset:.3f} {dur:.3f} "
                f"<NA> <NA> {speaker} <NA> <NA>\n"
            )


def read_rttm(path) -> SegmentAnnotation:
    ann = SegmentAnnotation()
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0] != "SPEAKER":
                continue
            ann.add(parts[7], float(parts[3]), float(parts[4]))
    return ann


def write_manifest(path, rows: list[dict]):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
