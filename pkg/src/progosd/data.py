"""Corpus construction: sessions on disk, in-memory training windows.

A training window is 250 frames (5 s of the 20 ms grid); its sample span is
(250-1)*320 + 400 = 80080 samples, so neighbouring windows share 80 samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio
from .audio import (MixSpec, SegmentAnnotation, Waveform, fbank, frame_grid,
                    mix_session, read_manifest, read_rttm, read_wav,
                    write_manifest, write_rttm, write_wav)
from .labels import (WINDOW_FRAMES, crisp_tracks, cut_windows, fuzzify,
                     rasterize, window_class_tag, write_label_cache,
                     FrameLabelTrack)

WINDOW_SAMPLES = (WINDOW_FRAMES - 1) * audio.HOP_SAMPLES + audio.WIN_SAMPLES


@dataclass
class TrainingWindow:
    session_id: str
    start_frame: int
    class_tag: str
    samples: np.ndarray        # float32, WINDOW_SAMPLES
    fbank_mat: np.ndarray      # float32, (WINDOW_FRAMES, 80)
    vad: np.ndarray            # fuzzy targets, (WINDOW_FRAMES,)
    osd: np.ndarray
    spk_targets: np.ndarray    # int16, speaker index or -1, (WINDOW_FRAMES,)


def session_speaker_counts(ann: SegmentAnnotation, num_frames: int) -> np.ndarray:
    return rasterize(ann, num_frames)


def single_speaker_targets(ann: SegmentAnnotation, num_frames: int,
                           speaker_index: dict) -> np.ndarray:
    """Per-frame global speaker index where exactly one speaker is active."""
    centers = np.arange(num_frames) * audio.FRAME_SHIFT_S \
        + audio.FRAME_CENTER_OFFSET_S
    active = np.full(num_frames, -1, dtype=np.int16)
    count = np.zeros(num_frames, dtype=np.int64)
    for spk, onset, dur in ann.entries:
        hit = (centers >= onset) & (centers < onset + dur)
        count += hit
        active[hit] = speaker_index[spk]
    active[count != 1] = -1
    return active


def windows_from_session(session_id: str, wav: Waveform, ann: SegmentAnnotation,
                         speaker_index: dict | None = None) -> list[TrainingWindow]:
    n = len(wav.samples)
    t = frame_grid(n)
    counts = rasterize(ann, t)
    vad_crisp, osd_crisp = crisp_tracks(counts)
    vad_fuzzy, osd_fuzzy = fuzzify(vad_crisp), fuzzify(osd_crisp)
    if speaker_index is None:
        speaker_index = {s: i for i, s in enumerate(ann.speakers())}
    spk = single_speaker_targets(ann, t, speaker_index)
    fb = fbank(wav).astype(np.float32)
    out = []
    for w in cut_windows(session_id, counts):
        f = w.start_frame
        a = f * audio.HOP_SAMPLES
        if a + WINDOW_SAMPLES > n:
            continue
        out.append(TrainingWindow(
            session_id=session_id,
            start_frame=f,
            class_tag=w.class_tag,
            samples=wav.samples[a:a + WINDOW_SAMPLES].astype(np.float32),
            fbank_mat=fb[f:f + WINDOW_FRAMES],
            vad=vad_fuzzy[f:f + WINDOW_FRAMES],
            osd=osd_fuzzy[f:f + WINDOW_FRAMES],
            spk_targets=spk[f:f + WINDOW_FRAMES],
        ))
    return out


@dataclass
class CorpusSpec:
    num_sessions: int = 10
    session_seconds: float = 120.0
    num_speakers: int = 3
    target_overlap_ratio: float = 0.35
    gap_mean_seconds: float = 0.8
    seed: int = 0
    lowpass: bool = False   # crude far-field colouration for the finetune corpus


def _lowpass(samples: np.ndarray) -> np.ndarray:
    # one-pole smoother; enough to shift the corpus statistics
    from scipy.signal import lfilter
    a = 0.25
    return lfilter([a], [1.0, -(1.0 - a)], samples)


def generate_corpus(spec: CorpusSpec):
    """In-memory corpus: list of (session_id, Waveform, SegmentAnnotation)."""
    sessions = []
    for i in range(spec.num_sessions):
        mix = MixSpec(num_speakers=spec.num_speakers,
                      target_overlap_ratio=spec.target_overlap_ratio,
                      session_seconds=spec.session_seconds,
                      gap_mean_seconds=spec.gap_mean_seconds,
                      seed=spec.seed * 10007 + i)
        wav, ann = mix_session(mix)
        if spec.lowpass:
            wav = Waveform(_lowpass(wav.samples), id=wav.id)
        sessions.append((f"sess{spec.seed}_{i}", wav, ann))
    return sessions


def corpus_speaker_index(sessions) -> dict:
    idx = {}
    for _, _, ann in sessions:
        for s in ann.speakers():
            if s not in idx:
                idx[s] = len(idx)
    return idx


def corpus_windows(sessions, speaker_index=None) -> list[TrainingWindow]:
    if speaker_index is None:
        speaker_index = corpus_speaker_index(sessions)
    out = []
    for sid, wav, ann in sessions:
        out.extend(windows_from_session(sid, wav, ann, speaker_index))
    return out


def split_sessions(sessions, dev_fraction=0.2):
    """Deterministic session-level train/dev split (dev takes the tail)."""
    n_dev = max(1, int(round(len(sessions) * dev_fraction)))
    if len(sessions) <= n_dev:
        raise ValueError("not enough sessions to split")
    return sessions[:-n_dev], sessions[-n_dev:]


def write_corpus(out_dir, sessions) -> Path:
    """Waveforms + RTTM + fuzzy label caches + manifest; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sid, wav, ann in sessions:
        wav_path = out_dir / f"{sid}.wav"
        rttm_path = out_dir / f"{sid}.rttm"
        label_path = out_dir / f"{sid}.osdl"
        write_wav(wav_path, wav)
        write_rttm(rttm_path, sid, ann)
        t = frame_grid(len(wav.samples))
        vad_crisp, osd_crisp = crisp_tracks(rasterize(ann, t))
        write_label_cache(label_path, FrameLabelTrack(
            vad=fuzzify(vad_crisp), osd=fuzzify(osd_crisp)))
        rows.append({
            "audio_path": str(wav_path),
            "rttm_path": str(rttm_path),
            "duration_seconds": round(wav.duration, 3),
        })
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, rows)
    return manifest


def load_corpus(manifest_path):
    """Sessions back from a manifest written by write_corpus."""
    sessions = []
    for row in read_manifest(manifest_path):
        wav = read_wav(row["audio_path"])
        ann = read_rttm(row["rttm_path"])
        sid = Path(row["audio_path"]).stem
        sessions.append((sid, wav, ann))
    return sessions
