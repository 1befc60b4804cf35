"""Estimator-style wrapper so the detector composes with sklearn pipelines.

fit() consumes sessions (waveform + annotation pairs), predict() returns
per-frame crisp overlap decisions, predict_scores() the raw score tracks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .audio import Waveform, frame_grid
from .data import (corpus_speaker_index, corpus_windows, split_sessions)
from .evaluation import binarize, score_session
from .labels import FrameLabelTrack
from .model import ModelConfig
from .training import TrainConfig, train


def check_sessions(sessions):
    """Validate the (session_id, Waveform, SegmentAnnotation) structure."""
    sessions = list(sessions)
    if not sessions:
        raise ValueError("need at least one session")
    for item in sessions:
        if len(item) != 3 or not isinstance(item[1], Waveform):
            raise TypeError(
                "sessions must be (session_id, Waveform, SegmentAnnotation)")
    return sessions


class ProgressiveOSDDetector(BaseEstimator):
    """Speaker-aware progressive overlap detector with an sklearn surface."""

    def __init__(self, variant="p-spkAtt", base_lr=1e-3, weight_decay=1e-4,
                 batch_size=8, epochs=20, seed=0, aux_speaker_weight=0.2,
                 threshold=0.5, d_model=64, d_spk=32, n_enc=2, n_dec=2,
                 heads=4, dev_fraction=0.2):
        self.variant = variant
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.aux_speaker_weight = aux_speaker_weight
        self.threshold = threshold
        self.d_model = d_model
        self.d_spk = d_spk
        self.n_enc = n_enc
        self.n_dec = n_dec
        self.heads = heads
        self.dev_fraction = dev_fraction

    def _train_config(self, num_speakers: int) -> TrainConfig:
        model = ModelConfig(
            d_model=self.d_model, d_spk=self.d_spk, n_enc=self.n_enc,
            n_dec=self.n_dec, heads=self.heads,
            num_aux_speakers=num_speakers if self.aux_speaker_weight > 0 else 0)
        return TrainConfig(
            variant=self.variant, base_lr=self.base_lr,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            epochs=self.epochs, seed=self.seed,
            aux_speaker_weight=self.aux_speaker_weight,
            eval_threshold=self.threshold, model=model)

    def fit(self, sessions, y=None):
        sessions = check_sessions(sessions)
        train_s, dev_s = split_sessions(sessions, self.dev_fraction)
        idx = corpus_speaker_index(sessions)
        config = self._train_config(len(idx))
        result = train(config, corpus_windows(train_s, idx),
                       corpus_windows(dev_s, idx))
        self.config_ = config
        self.model_ = result.model
        self.metrics_ = result.metrics
        self.best_dev_f1_ = result.best_dev_f1
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() before predicting")

    def predict_scores(self, wav: Waveform):
        """(vad_scores, osd_scores), one value per 20 ms frame."""
        self._check_fitted()
        t = frame_grid(len(wav.samples))
        empty = FrameLabelTrack(vad=np.zeros(t), osd=np.zeros(t))
        return score_session(self.model_, wav, empty,
                             self.config_.speaker_mode,
                             self.config_.progressive)

    def predict(self, wav: Waveform):
        """Crisp per-frame overlap decisions at the configured threshold."""
        _, osd = self.predict_scores(wav)
        return binarize(osd, self.threshold)

    def score(self, sessions, y=None):
        """Mean dev-style OSD F1 over the given sessions."""
        from .audio import frame_grid
        from .evaluation import confusion, prf
        from .labels import crisp_tracks, fuzzify, rasterize
        self._check_fitted()
        merged = None
        for _, wav, ann in check_sessions(sessions):
            t = frame_grid(len(wav.samples))
            _, osd_crisp = crisp_tracks(rasterize(ann, t))
            ref = binarize(fuzzify(osd_crisp), 0.5)
            hyp = self.predict(wav)
            c = confusion(hyp, ref)
            merged = c if merged is None else merged.merge(c)
        return prf(merged)[2]
