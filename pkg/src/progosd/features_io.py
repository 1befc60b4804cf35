"""Binary frame-feature files (magic OSDF) shared with external exporters.

Layout: magic, version byte, u32 T, u32 D, T*D little-endian f32 row-major,
JSON trailer, u32 trailer byte length.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FEATURE_MAGIC = b"OSDF"
FEATURE_VERSION = 1


def write_features(path, features: np.ndarray, source_model: str,
                   frame_shift_ms: float = 20.0, extra: dict | None = None):
    features = np.asarray(features)
    t, d = features.shape
    trailer = {"source_model": source_model, "frame_shift_ms": frame_shift_ms}
    if extra:
        trailer.update(extra)
    blob = json.dumps(trailer, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(bytes([FEATURE_VERSION]))
        f.write(struct.pack("<II", t, d))
        f.write(features.astype("<f4").tobytes())
        f.write(blob)
        f.write(struct.pack("<I", len(blob)))


def read_features(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad feature file magic {data[:4]!r}")
    version = data[4]
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    t, d = struct.unpack("<II", data[5:13])
    body_end = 13 + 4 * t * d
    features = np.frombuffer(data[13:body_end], dtype="<f4").reshape(t, d)
    (trailer_len,) = struct.unpack("<I", data[-4:])
    trailer = json.loads(data[body_end:body_end + trailer_len].decode())
    return features.astype(np.float64), trailer
