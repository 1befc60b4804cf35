"""Estimator wrapper: sklearn conventions, fit/predict, ablation helpers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from progosd.ablation import (AblationError, ablation_matrix,
                              progressive_delta_table)
from progosd.estimator import ProgressiveOSDDetector, check_sessions
from progosd.audio import Waveform, frame_grid
from progosd.model import ModelConfig
from progosd.training import TrainConfig

from conftest import tiny_model_config


def tiny_detector(**kw):
    base = dict(d_model=8, d_spk=4, n_enc=1, n_dec=1, heads=2,
                epochs=1, batch_size=8, seed=3)
    base.update(kw)
    return ProgressiveOSDDetector(**base)


@pytest.fixture(scope="module")
def fitted(small_corpus):
    return tiny_detector().fit(small_corpus)


def test_get_set_params_roundtrip():
    det = tiny_detector()
    params = det.get_params()
    assert params["variant"] == "p-spkAtt"
    det.set_params(epochs=5, threshold=0.4)
    assert det.epochs == 5 and det.threshold == 0.4


def test_clone_preserves_params():
    det = tiny_detector(variant="u-spkMSE", base_lr=5e-4)
    det2 = clone(det)
    assert det2.get_params() == det.get_params()


def test_not_fitted_raises():
    det = tiny_detector()
    with pytest.raises(NotFittedError):
        det.predict(Waveform(np.zeros(16000)))


def test_check_sessions_rejects_garbage():
    with pytest.raises(ValueError):
        check_sessions([])
    with pytest.raises(TypeError):
        check_sessions([(1, 2)])
    with pytest.raises(TypeError):
        check_sessions([("s", np.zeros(10), None)])


def test_fit_predict_shapes(fitted, small_corpus):
    _, wav, _ = small_corpus[0]
    t = frame_grid(len(wav.samples))
    crisp = fitted.predict(wav)
    assert crisp.shape == (t,)
    assert set(np.unique(crisp)) <= {0.0, 1.0}
    vad, osd = fitted.predict_scores(wav)
    assert vad.shape == osd.shape == (t,)
    assert np.all((osd >= 0) & (osd <= 1))
    assert not np.any(np.isnan(osd))


def test_fit_exposes_training_state(fitted):
    assert hasattr(fitted, "model_") and hasattr(fitted, "config_")
    assert len(fitted.metrics_) == 1
    assert isinstance(fitted.best_dev_f1_, float)


def test_score_returns_f1_fraction(fitted, small_corpus):
    f1 = fitted.score(small_corpus[-1:])
    assert 0.0 <= f1 <= 1.0


def test_fit_deterministic(small_corpus):
    a = tiny_detector().fit(small_corpus)
    b = tiny_detector().fit(small_corpus)
    for pa, pb in zip(a.model_.parameters(), b.model_.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


# -- ablation helpers --------------------------------------------------------

def _tiny_train_config(variant):
    return TrainConfig(variant=variant, epochs=1, batch_size=8, seed=0,
                       base_lr=1e-3, model=tiny_model_config(
                           num_aux_speakers=12))


def test_ablation_duplicate_names_rejected(small_windows):
    cfgs = [("a", _tiny_train_config("p")), ("a", _tiny_train_config("u"))]
    with pytest.raises(AblationError, match="duplicate"):
        ablation_matrix(cfgs, small_windows, small_windows)


def test_ablation_needs_two_configs(small_windows):
    with pytest.raises(AblationError, match="at least 2"):
        ablation_matrix([("a", _tiny_train_config("p"))],
                        small_windows, small_windows)


def test_ablation_matrix_rows(small_windows):
    cfgs = [("p", _tiny_train_config("p")), ("u", _tiny_train_config("u"))]
    report = ablation_matrix(cfgs, small_windows, small_windows, seeds=(0,))
    assert [r["variant_name"] for r in report.rows] == ["p", "u"]
    for row in report.rows:
        assert 0.0 <= row["f1"] <= 100.0


def test_delta_table_format():
    p = {"variant_name": "p-spkAtt", "recall": 81.48, "precision": 84.08,
         "f1": 82.76}
    u = {"variant_name": "u-spkAtt", "recall": 80.80, "precision": 82.45,
         "f1": 81.62}
    txt = progressive_delta_table(p, u)
    lines = txt.splitlines()
    assert lines[0].split() == ["Method", "Recall", "Precision", "F1"]
    assert "delta (p - u)" in lines[-1]
    assert "+1.14" in lines[-1]
