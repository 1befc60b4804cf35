"""CLI surface: subcommands, config precedence, exit codes, artifacts."""

import json
from pathlib import Path

import numpy as np
import pytest

from progosd import cli
from progosd.audio import frame_grid, read_rttm, read_wav, rasterize_counts
from progosd.cli import load_run_config, overlap_segments
from progosd.data import write_corpus
from progosd.evaluation import binarize
from progosd.training import load_checkpoint


@pytest.fixture(scope="module")
def corpus_dir(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    write_corpus(out, small_corpus)
    return out


@pytest.fixture(scope="module")
def tiny_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(json.dumps({
        "model": {"d_model": 8, "d_spk": 4, "n_enc": 1, "n_dec": 1,
                  "heads": 2, "conv_kernel": 3, "ff_mult": 1},
        "train": {"epochs": 1, "batch_size": 8, "base_lr": 1e-3,
                  "variant": "p-spkAtt", "seed": 3},
    }))
    return path


@pytest.fixture(scope="module")
def trained_dir(corpus_dir, tiny_cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    rc = cli.main(["train", "--config", str(tiny_cfg_file),
                   "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(out)])
    assert rc == 0
    return out


# -- config file handling ----------------------------------------------------

def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"daat": {}}))
    with pytest.raises(cli.UsageError, match="unknown config section"):
        load_run_config(path)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"epoch": 3}}))
    with pytest.raises(cli.UsageError, match="unknown keys"):
        load_run_config(path)


def test_non_object_root_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([1, 2]))
    with pytest.raises(cli.UsageError, match="must be an object"):
        load_run_config(path)


def test_bad_config_exit_code_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"nope": 1}}))
    rc = cli.main(["train", "--config", str(path),
                   "--manifest", "x.jsonl", "--out", str(tmp_path)])
    assert rc == 2


def test_malformed_json_exit_code_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    rc = cli.main(["train", "--config", str(path),
                   "--manifest", "x.jsonl", "--out", str(tmp_path)])
    assert rc == 2


def test_missing_manifest_exit_code_1(tmp_path):
    rc = cli.main(["train", "--manifest", str(tmp_path / "missing.jsonl"),
                   "--out", str(tmp_path), "--epochs", "1"])
    assert rc == 1


def test_bad_variant_exit_code_2(corpus_dir, tmp_path):
    rc = cli.main(["train", "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(tmp_path), "--variant", "q-spkAtt"])
    assert rc == 2


def test_flag_overrides_config_file(tiny_cfg_file, tmp_path):
    doc = load_run_config(tiny_cfg_file)
    cfg = cli.build_train_config(doc, {"epochs": 7, "base_lr": None})
    assert cfg.epochs == 7          # flag wins
    assert cfg.base_lr == 1e-3      # None flag falls back to the file
    assert cfg.variant == "p-spkAtt"


# -- synth-data --------------------------------------------------------------

def test_synth_data_writes_corpus(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "data": {"num_sessions": 2, "session_seconds": 12.0,
                 "num_speakers": 2, "target_overlap_ratio": 0.2}}))
    out = tmp_path / "corpus"
    rc = cli.main(["--seed", "5", "synth-data", "--config", str(cfg),
                   "--out", str(out)])
    assert rc == 0
    assert (out / "manifest.jsonl").exists()
    assert len(list(out.glob("*.wav"))) == 2
    assert len(list(out.glob("*.rttm"))) == 2
    resolved = json.loads((out / "resolved-config.json").read_text())
    assert resolved["data"]["seed"] == 5
    assert "realized" in capsys.readouterr().out


def test_synth_data_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli.main(["--seed", "9", "synth-data", "--config",
                       str(_mini_data_cfg(tmp_path)), "--out", str(out)])
        assert rc == 0
        outs.append(out)
    wavs_a = sorted(p.name for p in outs[0].glob("*.wav"))
    for name in wavs_a:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def _mini_data_cfg(tmp_path):
    cfg = tmp_path / "mini.json"
    if not cfg.exists():
        cfg.write_text(json.dumps({
            "data": {"num_sessions": 1, "session_seconds": 8.0,
                     "num_speakers": 2, "target_overlap_ratio": 0.2}}))
    return cfg


# -- train / evaluate --------------------------------------------------------

def test_train_artifacts(trained_dir):
    assert (trained_dir / "checkpoint.osdc").exists()
    assert (trained_dir / "last.osdc").exists()
    assert (trained_dir / "metrics.jsonl").exists()
    resolved = json.loads((trained_dir / "resolved-config.json").read_text())
    assert resolved["train"]["variant"] == "p-spkAtt"
    lines = (trained_dir / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1
    row = json.loads(lines[0])
    assert {"epoch", "dev_f1"} <= set(row)


def test_evaluate_report(trained_dir, corpus_dir, tmp_path):
    rc = cli.main(["evaluate",
                   "--checkpoint", str(trained_dir / "checkpoint.osdc"),
                   "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(tmp_path)])
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    names = [r["variant_name"] for r in report["rows"]]
    assert names == ["vad", "osd"]
    txt = (tmp_path / "report.txt").read_text()
    assert "Method" in txt and "F1" in txt


def test_evaluate_sweep(trained_dir, corpus_dir, tmp_path):
    rc = cli.main(["evaluate",
                   "--checkpoint", str(trained_dir / "checkpoint.osdc"),
                   "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(tmp_path), "--sweep"])
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["rows"]) == 9
    assert report["rows"][0]["variant_name"] == "osd@0.1"


def test_resume_from_last(corpus_dir, tiny_cfg_file, tmp_path):
    out = tmp_path / "resumed"
    doc = json.loads(tiny_cfg_file.read_text())
    doc["train"]["epochs"] = 2
    cfg2 = tmp_path / "run2.json"
    cfg2.write_text(json.dumps(doc))

    rc = cli.main(["train", "--config", str(cfg2),
                   "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(out)])
    assert rc == 0
    _, _, _, rng = load_checkpoint(out / "last.osdc")
    assert rng["next_epoch"] == 2

    out2 = tmp_path / "resumed2"
    out2.mkdir()
    rc = cli.main(["train", "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(out2), "--resume", str(out / "last.osdc")])
    assert rc == 0  # nothing left to train; checkpoint is still written
    assert (out2 / "checkpoint.osdc").exists()


# -- infer -------------------------------------------------------------------

def test_overlap_segments_roundtrip():
    rng = np.random.default_rng(11)
    for _ in range(20):
        scores = rng.random(200)
        crisp = binarize(scores, 0.5)
        segs = overlap_segments(scores, 0.5)
        # re-rasterize at frame centers: center i is at i*0.02 + 0.0125
        rebuilt = np.zeros(200)
        for onset, dur in segs:
            for i in range(200):
                c = i * 0.02 + 0.0125
                if onset <= c < onset + dur:
                    rebuilt[i] = 1.0
        np.testing.assert_array_equal(rebuilt, crisp)


def test_infer_outputs(trained_dir, corpus_dir, tmp_path):
    wav_path = sorted(corpus_dir.glob("*.wav"))[0]
    rc = cli.main(["infer",
                   "--checkpoint", str(trained_dir / "checkpoint.osdc"),
                   "--wav", str(wav_path), "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "scores.jsonl").read_text().splitlines()
    wav = read_wav(wav_path)
    assert len(lines) == frame_grid(len(wav.samples))
    row = json.loads(lines[0])
    assert set(row) == {"frame", "t_seconds", "vad", "osd"}
    assert 0.0 <= row["osd"] <= 1.0
    assert abs(row["t_seconds"] - 0.0125) < 1e-9
    for line in (tmp_path / "overlap.rttm").read_text().splitlines():
        parts = line.split()
        assert parts[0] == "SPEAKER"
        assert float(parts[4]) > 0  # durations positive


# -- ablate ------------------------------------------------------------------

def test_ablate_reports_delta(corpus_dir, tiny_cfg_file, tmp_path, capsys):
    rc = cli.main(["ablate", "--config", str(tiny_cfg_file),
                   "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(tmp_path), "--variants", "p-spkAtt,u-spkAtt",
                   "--epochs", "1", "--num-seeds", "1"])
    assert rc == 0
    report = json.loads((tmp_path / "ablation.json").read_text())
    assert [r["variant_name"] for r in report["rows"]] == \
        ["p-spkAtt", "u-spkAtt"]
    assert "delta (p - u)" in capsys.readouterr().out


def test_ablate_bad_variant_exit_2(corpus_dir, tmp_path):
    rc = cli.main(["ablate", "--manifest", str(corpus_dir / "manifest.jsonl"),
                   "--out", str(tmp_path), "--variants", "p,zzz",
                   "--epochs", "1"])
    assert rc == 2
