"""Command-line surface: synth-data, train, evaluate, infer, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. All
randomness derives from --seed / config seeds; OSD_LOG sets verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import audio
from .ablation import ablation_matrix, progressive_delta_table
from .audio import frame_grid, overlap_ratio, read_rttm, read_wav, read_manifest
from .data import (CorpusSpec, corpus_speaker_index, corpus_windows,
                   generate_corpus, load_corpus, split_sessions, write_corpus)
from .evaluation import (EvalReport, binarize, evaluate_corpus, score_session,
                         threshold_sweep)
from .labels import FrameLabelTrack, crisp_tracks, fuzzify, rasterize
from .model import ModelConfig
from .training import (TrainConfig, checkpoint_hash, load_checkpoint,
                       pretrain_then_finetune, save_checkpoint, train,
                       parse_variant, VariantError)

log = logging.getLogger("progosd")


class UsageError(ValueError):
    pass


CONFIG_SECTIONS = {
    "data": CorpusSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": None,
}
EVAL_KEYS = {"threshold", "sweep"}


def load_run_config(path) -> dict:
    """Parse and schema-check a run-config file; unknown keys are rejected."""
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config root must be an object")
    for section, payload in doc.items():
        if section not in CONFIG_SECTIONS:
            raise UsageError(f"{path}: unknown config section '{section}'")
        if not isinstance(payload, dict):
            raise UsageError(f"{path}: section '{section}' must be an object")
        cls = CONFIG_SECTIONS[section]
        allowed = EVAL_KEYS if cls is None else \
            {f.name for f in dataclasses.fields(cls)} - {"model"}
        unknown = set(payload) - allowed
        if unknown:
            raise UsageError(
                f"{path}: unknown keys in '{section}': {sorted(unknown)}")
    return doc


def build_train_config(doc: dict, overrides: dict) -> TrainConfig:
    train_kw = dict(doc.get("train", {}))
    model_kw = dict(doc.get("model", {}))
    for key, val in overrides.items():
        if val is None:
            continue
        train_kw[key] = val
    if "loss_weights" in train_kw:
        train_kw["loss_weights"] = tuple(train_kw["loss_weights"])
    try:
        return TrainConfig(model=ModelConfig(**model_kw), **train_kw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def _write_resolved_config(out_dir: Path, payload: dict):
    with open(out_dir / "resolved-config.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def cmd_synth(args) -> int:
    doc = load_run_config(args.config) if args.config else {}
    data_kw = dict(doc.get("data", {}))
    if args.seed is not None:
        data_kw["seed"] = args.seed
    spec = CorpusSpec(**data_kw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sessions = generate_corpus(spec)
    manifest = write_corpus(out_dir, sessions)
    total_s = sum(wav.duration for _, wav, _ in sessions)
    ratios = [overlap_ratio(ann, frame_grid(len(wav.samples)))
              for _, wav, ann in sessions]
    realized = float(np.mean(ratios))
    _write_resolved_config(out_dir, {"data": dataclasses.asdict(spec)})
    print(f"wrote {len(sessions)} sessions ({total_s / 3600:.2f} h) "
          f"to {manifest}")
    print(f"target overlap ratio {spec.target_overlap_ratio:.4f}, "
          f"realized {realized:.4f}")
    return 0


def _windows_for_manifest(manifest_path):
    sessions = load_corpus(manifest_path)
    idx = corpus_speaker_index(sessions)
    return sessions, idx


def cmd_train(args) -> int:
    doc = load_run_config(args.config) if args.config else {}
    overrides = {"variant": args.variant, "seed": args.seed,
                 "epochs": args.epochs, "base_lr": args.lr}
    if args.variant is not None:
        try:
            parse_variant(args.variant)
        except VariantError as e:
            raise UsageError(
                f"{e}; allowed: p|u optionally with -spkAtt or -spkMSE") from e
    config = build_train_config(doc, overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    sessions, idx = _windows_for_manifest(args.manifest)
    if config.aux_speaker_weight > 0 and config.model.num_aux_speakers == 0:
        config.model.num_aux_speakers = len(idx)
    tr_sessions, dev_sessions = split_sessions(sessions)
    tr = corpus_windows(tr_sessions, idx)
    dev = corpus_windows(dev_sessions, idx)

    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "checkpoint.osdc"
    last_path = out_dir / "last.osdc"

    def on_epoch_end(epoch, model, optimizer):
        save_checkpoint(last_path, model, optimizer, config,
                        {"next_epoch": epoch + 1,
                         "total_steps": optimizer.total_steps})

    if args.resume:
        config, model, optimizer, rng_state = load_checkpoint(args.resume)
        if rng_state.get("total_steps") is not None:
            optimizer.total_steps = rng_state["total_steps"]
        result = train(config, tr, dev, model=model, optimizer=optimizer,
                       metrics_path=metrics_path,
                       start_epoch=rng_state.get("next_epoch", 0),
                       on_epoch_end=on_epoch_end)
    elif args.pretrain_manifest:
        pre_sessions, pre_idx = _windows_for_manifest(args.pretrain_manifest)
        pre_tr_s, pre_dev_s = split_sessions(pre_sessions)
        result = pretrain_then_finetune(
            config,
            (corpus_windows(pre_tr_s, pre_idx), corpus_windows(pre_dev_s, pre_idx)),
            (tr, dev), metrics_path=metrics_path)
    else:
        result = train(config, tr, dev, metrics_path=metrics_path,
                       on_epoch_end=on_epoch_end)

    for p in result.model.parameters():
        p.data[...] = result.best_params[p.name]
    save_checkpoint(ckpt_path, result.model, result.optimizer, config,
                    {"next_epoch": config.epochs,
                     "total_steps": result.optimizer.total_steps})
    _write_resolved_config(out_dir, {"train": config.to_dict()})
    best = result.best_dev_f1
    print(f"trained {config.variant} for {len(result.metrics)} epochs; "
          f"best dev OSD F1 {best:.4f}; checkpoint {ckpt_path}")
    return 0


def _label_pairs(manifest_path):
    pairs = []
    for row in read_manifest(manifest_path):
        wav = read_wav(row["audio_path"])
        ann = read_rttm(row["rttm_path"])
        t = frame_grid(len(wav.samples))
        vad_c, osd_c = crisp_tracks(rasterize(ann, t))
        pairs.append((wav, FrameLabelTrack(vad=fuzzify(vad_c),
                                           osd=fuzzify(osd_c))))
    return pairs


def cmd_evaluate(args) -> int:
    config, model, _, _ = load_checkpoint(args.checkpoint)
    pairs = _label_pairs(args.manifest)
    ck_hash = checkpoint_hash(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        report = threshold_sweep(model, pairs, config.speaker_mode,
                                 config.progressive)
    else:
        report = evaluate_corpus(model, pairs, config.speaker_mode,
                                 config.progressive, threshold=args.threshold,
                                 corpus_id=str(args.manifest),
                                 checkpoint_hash=ck_hash)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return 0


def overlap_segments(osd_scores: np.ndarray, threshold: float):
    """Thresholded score track -> (onset, duration) overlap segments whose
    re-rasterization at frame centers reproduces the crisp track exactly."""
    crisp = binarize(osd_scores, threshold)
    segments = []
    i = 0
    n = len(crisp)
    while i < n:
        if crisp[i] == 0:
            i += 1
            continue
        j = i
        while j < n and crisp[j] == 1:
            j += 1
        onset = i * audio.FRAME_SHIFT_S + audio.FRAME_CENTER_OFFSET_S - 0.01
        dur = (j - i) * audio.FRAME_SHIFT_S
        segments.append((round(onset, 3), round(dur, 3)))
        i = j
    return segments


def cmd_infer(args) -> int:
    config, model, _, _ = load_checkpoint(args.checkpoint)
    wav = read_wav(args.wav)
    t = frame_grid(len(wav.samples))
    empty = FrameLabelTrack(vad=np.zeros(t), osd=np.zeros(t))
    vad_scores, osd_scores = score_session(model, wav, empty,
                                           config.speaker_mode,
                                           config.progressive)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "scores.jsonl"
    with open(scores_path, "w") as f:
        for i in range(t):
            f.write(json.dumps({
                "frame": i,
                "t_seconds": round(i * audio.FRAME_SHIFT_S
                                   + audio.FRAME_CENTER_OFFSET_S, 4),
                "vad": round(float(vad_scores[i]), 6),
                "osd": round(float(osd_scores[i]), 6),
            }) + "\n")
    segs = overlap_segments(osd_scores, args.threshold)
    seg_path = out_dir / "overlap.rttm"
    sid = Path(args.wav).stem
    with open(seg_path, "w") as f:
        for onset, dur in segs:
            f.write(f"SPEAKER {sid} 1 {onset:.3f} {dur:.3f} "
                    f"<NA> <NA> overlap <NA> <NA>\n")
    print(f"wrote {t} frame scores to {scores_path} and "
          f"{len(segs)} overlap segments to {seg_path}")
    return 0


def cmd_ablate(args) -> int:
    doc = load_run_config(args.config) if args.config else {}
    base = build_train_config(doc, {"seed": args.seed, "epochs": args.epochs})
    sessions, idx = _windows_for_manifest(args.manifest)
    tr_s, dev_s = split_sessions(sessions)
    tr = corpus_windows(tr_s, idx)
    dev = corpus_windows(dev_s, idx)
    variants = args.variants.split(",")
    configs = []
    for v in variants:
        try:
            parse_variant(v)
        except VariantError as e:
            raise UsageError(str(e)) from e
        configs.append((v, TrainConfig(**{**base.to_dict(), "variant": v,
                                          "model": base.model})))
    seeds = [args.seed + k for k in range(args.num_seeds)]
    report = ablation_matrix(configs, tr, dev, seeds=seeds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(report.to_json() + "\n")
    (out_dir / "ablation.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    p_rows = [r for r in report.rows if r["variant_name"].startswith("p")]
    u_rows = [r for r in report.rows if r["variant_name"].startswith("u")]
    if p_rows and u_rows:
        print()
        print(progressive_delta_table(p_rows[0], u_rows[0]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progosd",
        description="Speaker-aware progressive overlapping speech detection")
    parser.add_argument("--seed", type=int, default=None,
                        help="base seed overriding config files")
    parser.add_argument("--jobs", type=int, default=os.cpu_count(),
                        help="worker count for data synthesis and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--config", help="run-config JSON (data section)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector on a corpus manifest")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pretrain-manifest",
                   help="optional corpus for the pretraining phase")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", help="e.g. p-spkAtt, u-spkMSE, p")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="frame metrics on a test manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", action="store_true",
                   help="report OSD metrics across thresholds 0.1..0.9")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="score a single 16 kHz mono wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train and compare several variants")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="p-spkAtt,u-spkAtt")
    p.add_argument("--epochs", type=int)
    p.add_argument("--num-seeds", type=int, default=3)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("OSD_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (UsageError, VariantError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
