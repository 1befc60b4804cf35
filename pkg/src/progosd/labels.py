"""Frame-level fuzzy targets and balanced window curation.

Crisp labels come from speaker counts at frame centers; fuzzification puts a
10-frame linear ramp inside each labeled run so the support never grows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio import SegmentAnnotation, rasterize_counts

RAMP_FRAMES = 10
WINDOW_FRAMES = 250  # 5 s at 20 ms
CLASS_SILENCE = "silence"
CLASS_SINGLE = "single"
CLASS_OVERLAP = "overlap"
# tie-break priority: rarer class wins
_CLASS_PRIORITY = {CLASS_OVERLAP: 2, CLASS_SINGLE: 1, CLASS_SILENCE: 0}

LABEL_MAGIC = b"OSDL"
LABEL_VERSION = 1


class DomainError(ValueError):
    pass


class CurationError(ValueError):
    pass


@dataclass
class FrameLabelTrack:
    vad: np.ndarray   # fuzzy targets in [0, 1]
    osd: np.ndarray
    frame_shift: float = 0.02

    def __post_init__(self):
        self.vad = np.asarray(self.vad, dtype=np.float64)
        self.osd = np.asarray(self.osd, dtype=np.float64)
        assert len(self.vad) == len(self.osd)

    def __len__(self):
        return len(self.vad)


@dataclass
class SegmentWindow:
    session_id: str
    start_frame: int
    num_frames: int
    class_tag: str


def rasterize(annotation: SegmentAnnotation, num_frames: int) -> np.ndarray:
    """Per-frame active-speaker counts at frame centers."""
    return rasterize_counts(annotation, num_frames)


def crisp_tracks(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crisp VAD (count >= 1) and OSD (count >= 2) from speaker counts."""
    return (counts >= 1).astype(np.float64), (counts >= 2).astype(np.float64)


def fuzzify(crisp: np.ndarray) -> np.ndarray:
    """Linear 10-frame onset/offset ramps inside each run of ones.

    Frame k of a run of length L gets min(1, (k+1)/10, (L-k)/10), so runs of
    20+ frames keep a plateau of exact ones and short runs degrade to a
    triangle. Support is unchanged.
    """
    crisp = np.asarray(crisp, dtype=np.float64)
    if not np.all((crisp == 0.0) | (crisp == 1.0)):
        raise DomainError("fuzzify expects a binary track")
    out = np.zeros_like(crisp)
    n = len(crisp)
    i = 0
    while i < n:
        if crisp[i] == 0.0:
            i += 1
            continue
        j = i
        while j < n and crisp[j] == 1.0:
            j += 1
        length = j - i
        k = np.arange(length)
        out[i:j] = np.minimum(1.0, np.minimum((k + 1) / RAMP_FRAMES,
                                              (length - k) / RAMP_FRAMES))
        i = j
    return out


def fuzzy_labels(annotation: SegmentAnnotation, num_frames: int) -> FrameLabelTrack:
    counts = rasterize(annotation, num_frames)
    vad_crisp, osd_crisp = crisp_tracks(counts)
    return FrameLabelTrack(vad=fuzzify(vad_crisp), osd=fuzzify(osd_crisp))


def frame_class(count: int) -> str:
    if count >= 2:
        return CLASS_OVERLAP
    return CLASS_SINGLE if count == 1 else CLASS_SILENCE


def window_class_tag(counts: np.ndarray) -> str:
    """Majority frame class; ties break toward the rarer class."""
    tally = {CLASS_SILENCE: 0, CLASS_SINGLE: 0, CLASS_OVERLAP: 0}
    for c in counts:
        tally[frame_class(int(c))] += 1
    best = max(tally.items(), key=lambda kv: (kv[1], _CLASS_PRIORITY[kv[0]]))
    return best[0]


def cut_windows(session_id: str, counts: np.ndarray,
                window_frames: int = WINDOW_FRAMES) -> list[SegmentWindow]:
    """Non-overlapping fixed-length windows tagged by majority class."""
    windows = []
    for start in range(0, len(counts) - window_frames + 1, window_frames):
        tag = window_class_tag(counts[start:start + window_frames])
        windows.append(SegmentWindow(session_id, start, window_frames, tag))
    return windows


def curate_balanced(windows: list[SegmentWindow], seed: int) -> list[SegmentWindow]:
    """Equal counts of the three classes, sampled without replacement."""
    by_class = {CLASS_SILENCE: [], CLASS_SINGLE: [], CLASS_OVERLAP: []}
    for w in windows:
        by_class[w.class_tag].append(w)
    for tag, group in by_class.items():
        if not group:
            raise CurationError(f"no windows of class '{tag}' available")
    n = min(len(g) for g in by_class.values())
    rng = np.random.default_rng([seed, 0xBA1])
    chosen = []
    for tag in (CLASS_SILENCE, CLASS_SINGLE, CLASS_OVERLAP):
        group = by_class[tag]
        picks = rng.permutation(len(group))[:n]
        chosen.extend(group[i] for i in picks)
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


# -- label cache format ------------------------------------------------------

def write_label_cache(path, track: FrameLabelTrack):
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(bytes([LABEL_VERSION]))
        f.write(struct.pack("<I", len(track)))
        f.write(track.vad.astype("<f4").tobytes())
        f.write(track.osd.astype("<f4").tobytes())


def read_label_cache(path) -> FrameLabelTrack:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != LABEL_MAGIC:
            raise ValueError(f"{path}: bad label cache magic {magic!r}")
        version = f.read(1)[0]
        if version != LABEL_VERSION:
            raise ValueError(f"{path}: unsupported label cache version {version}")
        (t,) = struct.unpack("<I", f.read(4))
        vad = np.frombuffer(f.read(4 * t), dtype="<f4").astype(np.float64)
        osd = np.frombuffer(f.read(4 * t), dtype="<f4").astype(np.float64)
    return FrameLabelTrack(vad=vad, osd=osd)
