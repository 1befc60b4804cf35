"""Frame-level scoring: binarization, precision/recall/F1, corpus evaluation,
threshold sweeps, and ablation report tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class EvalConfigError(ValueError):
    pass


@dataclass
class FrameConfusion:
    true_positive: int = 0
    false_positive: int = 0
    false_negative: int = 0
    true_negative: int = 0

    def merge(self, other: "FrameConfusion") -> "FrameConfusion":
        return FrameConfusion(
            self.true_positive + other.true_positive,
            self.false_positive + other.false_positive,
            self.false_negative + other.false_negative,
            self.true_negative + other.true_negative,
        )

    @property
    def total(self) -> int:
        return (self.true_positive + self.false_positive
                + self.false_negative + self.true_negative)


def binarize(scores: np.ndarray, threshold: float) -> np.ndarray:
    """1 iff score >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise EvalConfigError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(scores).ravel() >= threshold).astype(np.int64)


def confusion(hyp: np.ndarray, ref: np.ndarray) -> FrameConfusion:
    hyp = np.asarray(hyp).ravel().astype(bool)
    ref = np.asarray(ref).ravel().astype(bool)
    if hyp.shape != ref.shape:
        raise EvalConfigError(
            f"track length mismatch: {hyp.shape} vs {ref.shape}")
    return FrameConfusion(
        true_positive=int(np.sum(hyp & ref)),
        false_positive=int(np.sum(hyp & ~ref)),
        false_negative=int(np.sum(~hyp & ref)),
        true_negative=int(np.sum(~hyp & ~ref)),
    )


def prf(c: FrameConfusion) -> tuple[float, float, float]:
    """(precision, recall, f1); zero conventions for empty denominators."""
    tp, fp, fn = c.true_positive, c.false_positive, c.false_negative
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1_from_percent(recall_pct: float, precision_pct: float) -> float:
    """F1 in percent from recall/precision in percent (report consistency)."""
    if recall_pct + precision_pct == 0:
        return 0.0
    return 2 * precision_pct * recall_pct / (precision_pct + recall_pct)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    threshold: float = 0.5
    corpus_id: str = ""
    checkpoint_hash: str = ""
    warning: str = ""

    def add_row(self, variant_name: str, c: FrameConfusion):
        p, r, f1 = prf(c)
        self.rows.append({
            "variant_name": variant_name,
            "recall": round(100 * r, 2),
            "precision": round(100 * p, 2),
            "f1": round(100 * f1, 2),
        })

    def to_json(self) -> str:
        return json.dumps({
            "threshold": self.threshold,
            "corpus_id": self.corpus_id,
            "checkpoint_hash": self.checkpoint_hash,
            "warning": self.warning,
            "rows": self.rows,
        }, indent=2)

    def to_text(self) -> str:
        lines = [f"{'Method':<28} {'Recall':>8} {'Precision':>10} {'F1':>8}"]
        for row in self.rows:
            lines.append(f"{row['variant_name']:<28} {row['recall']:>8.2f} "
                         f"{row['precision']:>10.2f} {row['f1']:>8.2f}")
        return "\n".join(lines)


def score_windows(model, windows, variant: str, progressive: bool,
                  threshold: float = 0.5):
    """Forward every window, return pooled VAD and OSD confusions."""
    vad_c = FrameConfusion()
    osd_c = FrameConfusion()
    for w in windows:
        out = model.forward(samples=w.samples.astype(np.float64),
                            fbank_mat=w.fbank_mat.astype(np.float64),
                            variant=variant, progressive=progressive)
        vad_c = vad_c.merge(confusion(binarize(out["s_vad"].data, threshold),
                                      binarize(w.vad, 0.5)))
        osd_c = osd_c.merge(confusion(binarize(out["s_osd"].data, threshold),
                                      binarize(w.osd, 0.5)))
    return vad_c, osd_c


def session_eval_windows(num_frames: int, window_frames: int = 250):
    """Window starts covering every frame; the last window snaps to the end."""
    if num_frames < window_frames:
        raise EvalConfigError(
            f"session has {num_frames} frames, need at least {window_frames}")
    starts = list(range(0, num_frames - window_frames + 1, window_frames))
    if starts[-1] + window_frames < num_frames:
        starts.append(num_frames - window_frames)
    return starts


def score_session(model, wav, labels, variant: str, progressive: bool,
                  threshold: float = 0.5):
    """Per-frame scores for one session, stitched from 250-frame windows."""
    from . import audio
    from .data import WINDOW_SAMPLES

    n = len(wav.samples)
    t = audio.frame_grid(n)
    fb = audio.fbank(wav)
    vad_scores = np.full(t, np.nan)
    osd_scores = np.full(t, np.nan)
    for start in session_eval_windows(t):
        a = start * audio.HOP_SAMPLES
        out = model.forward(samples=wav.samples[a:a + WINDOW_SAMPLES],
                            fbank_mat=fb[start:start + 250],
                            variant=variant, progressive=progressive)
        fill = np.isnan(vad_scores[start:start + 250])
        vad_scores[start:start + 250][fill] = out["s_vad"].data.ravel()[fill]
        osd_scores[start:start + 250][fill] = out["s_osd"].data.ravel()[fill]
    return vad_scores, osd_scores


def evaluate_corpus(model, sessions_with_labels, variant: str,
                    progressive: bool, threshold: float = 0.5,
                    corpus_id: str = "", checkpoint_hash: str = "") -> EvalReport:
    """Micro-averaged VAD and OSD metrics over whole sessions.

    sessions_with_labels: iterable of (wav, FrameLabelTrack).
    OSD is scored over all frames, not only speech frames.
    """
    sessions_with_labels = list(sessions_with_labels)
    if not sessions_with_labels:
        raise EvalConfigError("empty evaluation manifest")
    vad_c = FrameConfusion()
    osd_c = FrameConfusion()
    for wav, labels in sessions_with_labels:
        v, o = score_session(model, wav, labels, variant, progressive, threshold)
        vad_c = vad_c.merge(confusion(binarize(v, threshold),
                                      binarize(labels.vad, 0.5)))
        osd_c = osd_c.merge(confusion(binarize(o, threshold),
                                      binarize(labels.osd, 0.5)))
    report = EvalReport(threshold=threshold, corpus_id=corpus_id,
                        checkpoint_hash=checkpoint_hash)
    if osd_c.true_positive + osd_c.false_positive + osd_c.false_negative == 0:
        report.warning = "no positive OSD frames in reference or hypothesis"
    report.add_row("vad", vad_c)
    report.add_row("osd", osd_c)
    return report


def threshold_sweep(model, sessions_with_labels, variant: str,
                    progressive: bool, thresholds=None) -> EvalReport:
    thresholds = thresholds or [round(0.1 * k, 1) for k in range(1, 10)]
    scored = [(score_session(model, wav, labels, variant, progressive), labels)
              for wav, labels in sessions_with_labels]
    report = EvalReport(threshold=float("nan"), corpus_id="sweep")
    for th in thresholds:
        osd_c = FrameConfusion()
        for (_, osd_scores), labels in scored:
            osd_c = osd_c.merge(confusion(binarize(osd_scores, th),
                                          binarize(labels.osd, 0.5)))
        p, r, f1 = prf(osd_c)
        report.rows.append({
            "variant_name": f"osd@{th}",
            "recall": round(100 * r, 2),
            "precision": round(100 * p, 2),
            "f1": round(100 * f1, 2),
        })
    return report
