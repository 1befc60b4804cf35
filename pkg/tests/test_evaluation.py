import numpy as np
import pytest

from progosd.evaluation import (EvalConfigError, EvalReport, FrameConfusion,
                                binarize, confusion, evaluate_corpus,
                                f1_from_percent, prf, session_eval_windows,
                                threshold_sweep)
from progosd.labels import FrameLabelTrack
from progosd.model import ProgressiveModel
from conftest import tiny_model_config

# (recall %, precision %, f1 %): the 16 two-decimal row appearances across the
# reported comparison and ablation tables. Baseline rows quoted at one decimal
# from other papers are excluded: their printed F1 disagrees with the harmonic
# mean of their own P/R by up to 0.24 points at the source.
PAPER_ROWS = [
    (65.03, 64.43, 64.73), (79.38, 79.04, 79.21), (81.48, 84.08, 82.76),
    (81.48, 84.08, 82.76), (80.80, 82.45, 81.62), (79.43, 79.52, 79.47),
    (81.48, 84.08, 82.76), (80.90, 83.55, 82.20), (80.80, 82.45, 81.62),
    (80.52, 81.92, 81.21), (66.82, 65.10, 65.95), (65.03, 64.43, 64.73),
    (81.48, 84.08, 82.76), (79.19, 80.97, 80.07), (79.43, 79.52, 79.47),
    (78.45, 79.03, 78.73),
]


def test_binarize_tie_rule_and_idempotence():
    scores = np.full(5, 0.5)
    out = binarize(scores, 0.5)
    np.testing.assert_array_equal(out, 1)
    np.testing.assert_array_equal(binarize(out, 0.5), out)


def test_binarize_threshold_range():
    with pytest.raises(EvalConfigError):
        binarize(np.zeros(3), 1.0)
    with pytest.raises(EvalConfigError):
        binarize(np.zeros(3), 0.0)


def test_prf_conventions():
    assert prf(FrameConfusion(0, 0, 5, 10)) == (0.0, 0.0, 0.0)
    p, r, f1 = prf(FrameConfusion(10, 0, 0, 5))
    assert (p, r, f1) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("recall,precision,f1", PAPER_ROWS)
def test_f1_consistency_reported_rows(recall, precision, f1):
    assert abs(f1_from_percent(recall, precision) - f1) <= 0.01


def test_confusion_matches_bruteforce_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(10, 400))
        hyp = rng.integers(0, 2, size=n)
        ref = rng.integers(0, 2, size=n)
        c = confusion(hyp, ref)
        tp = fp = fn = tn = 0
        for h, r in zip(hyp, ref):
            if h and r:
                tp += 1
            elif h and not r:
                fp += 1
            elif not h and r:
                fn += 1
            else:
                tn += 1
        assert (c.true_positive, c.false_positive,
                c.false_negative, c.true_negative) == (tp, fp, fn, tn)
        assert c.total == n


def test_swap_symmetry():
    rng = np.random.default_rng(1)
    hyp = rng.integers(0, 2, size=500)
    ref = rng.integers(0, 2, size=500)
    p1, r1, f1a = prf(confusion(hyp, ref))
    p2, r2, f1b = prf(confusion(ref, hyp))
    assert p1 == pytest.approx(r2) and r1 == pytest.approx(p2)
    assert f1a == pytest.approx(f1b)


def test_micro_average_equals_concatenation():
    rng = np.random.default_rng(2)
    tracks = [(rng.integers(0, 2, size=n), rng.integers(0, 2, size=n))
              for n in (100, 37, 250)]
    merged = FrameConfusion()
    for h, r in tracks:
        merged = merged.merge(confusion(h, r))
    all_h = np.concatenate([h for h, _ in tracks])
    all_r = np.concatenate([r for _, r in tracks])
    assert prf(merged) == prf(confusion(all_h, all_r))


def test_session_eval_windows_cover_all_frames():
    for t in (250, 500, 613, 2998):
        starts = session_eval_windows(t)
        covered = np.zeros(t, dtype=bool)
        for s in starts:
            covered[s:s + 250] = True
        assert covered.all()
    with pytest.raises(EvalConfigError):
        session_eval_windows(100)


def _label_tracks(sessions):
    from progosd.audio import frame_grid
    from progosd.labels import crisp_tracks, fuzzify, rasterize
    out = []
    for _, wav, ann in sessions:
        t = frame_grid(len(wav.samples))
        v, o = crisp_tracks(rasterize(ann, t))
        out.append((wav, FrameLabelTrack(vad=fuzzify(v), osd=fuzzify(o))))
    return out


def test_evaluate_corpus_runs_and_is_order_invariant(small_corpus):
    model = ProgressiveModel(tiny_model_config(), seed=0)
    pairs = _label_tracks(small_corpus[:2])
    r1 = evaluate_corpus(model, pairs, "spkAtt", True, corpus_id="c")
    r2 = evaluate_corpus(model, list(reversed(pairs)), "spkAtt", True,
                         corpus_id="c")
    assert r1.rows == r2.rows
    assert {row["variant_name"] for row in r1.rows} == {"vad", "osd"}
    for row in r1.rows:
        if row["precision"] + row["recall"] > 0:
            assert abs(row["f1"] - f1_from_percent(row["recall"],
                                                   row["precision"])) <= 0.01


def test_evaluate_corpus_empty_manifest():
    model = ProgressiveModel(tiny_model_config(), seed=0)
    with pytest.raises(EvalConfigError):
        evaluate_corpus(model, [], "spkAtt", True)


def test_perfect_hypothesis_scores_hundred(small_corpus):
    # bypass the model: feed the reference labels as scores through confusion
    pairs = _label_tracks(small_corpus[:1])
    _, labels = pairs[0]
    c = confusion(binarize(labels.osd, 0.5), binarize(labels.osd, 0.5))
    p, r, f1 = prf(c)
    assert (p, r, f1) == (1.0, 1.0, 1.0)


def test_threshold_sweep_rows(small_corpus):
    model = ProgressiveModel(tiny_model_config(), seed=0)
    pairs = _label_tracks(small_corpus[:1])
    report = threshold_sweep(model, pairs, "spkAtt", True,
                             thresholds=[0.3, 0.5, 0.7])
    assert [r["variant_name"] for r in report.rows] == \
        ["osd@0.3", "osd@0.5", "osd@0.7"]


def test_report_serialization():
    rep = EvalReport(threshold=0.5, corpus_id="c", checkpoint_hash="abc")
    rep.add_row("p-OSD", FrameConfusion(50, 10, 20, 100))
    text = rep.to_text()
    assert "Method" in text and "p-OSD" in text
    import json
    doc = json.loads(rep.to_json())
    assert doc["rows"][0]["variant_name"] == "p-OSD"
