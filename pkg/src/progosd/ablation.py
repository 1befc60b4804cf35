"""Ablation harness: train several configurations over shared seeds and
report mean frame metrics per variant in the comparison-table layout."""

from __future__ import annotations

import numpy as np

from .evaluation import EvalReport, FrameConfusion, confusion, binarize, prf, \
    score_windows
from .training import TrainConfig, train


class AblationError(ValueError):
    pass


def ablation_matrix(configs: list[tuple[str, TrainConfig]], train_windows,
                    eval_windows, seeds=(0, 1, 2)) -> EvalReport:
    """Each named config is trained once per seed; rows report mean OSD
    precision/recall/F1 over seeds."""
    names = [name for name, _ in configs]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise AblationError(f"duplicate variant names: {dup}")
    if len(configs) < 2:
        raise AblationError("ablation needs at least 2 configs")
    report = EvalReport(corpus_id="ablation",
                        threshold=configs[0][1].eval_threshold)
    for name, cfg in configs:
        ps, rs, f1s = [], [], []
        for seed in seeds:
            run_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed,
                                     "model": cfg.model})
            result = train(run_cfg, train_windows, eval_windows)
            _restore_best(result)
            _, osd_c = score_windows(result.model, eval_windows,
                                     run_cfg.speaker_mode, run_cfg.progressive,
                                     run_cfg.eval_threshold)
            p, r, f1 = prf(osd_c)
            ps.append(p)
            rs.append(r)
            f1s.append(f1)
        report.rows.append({
            "variant_name": name,
            "recall": round(100 * float(np.mean(rs)), 2),
            "precision": round(100 * float(np.mean(ps)), 2),
            "f1": round(100 * float(np.mean(f1s)), 2),
        })
    return report


def _restore_best(result):
    for p in result.model.parameters():
        p.data[...] = result.best_params[p.name]


def progressive_delta_table(p_row: dict, u_row: dict) -> str:
    """Two-row comparison in the ablation-table format plus the delta line."""
    lines = [f"{'Method':<28} {'Recall':>8} {'Precision':>10} {'F1':>8}"]
    for row in (p_row, u_row):
        lines.append(f"{row['variant_name']:<28} {row['recall']:>8.2f} "
                     f"{row['precision']:>10.2f} {row['f1']:>8.2f}")
    delta = p_row["f1"] - u_row["f1"]
    lines.append(f"{'delta (p - u)':<28} {'':>8} {'':>10} {delta:>+8.2f}")
    return "\n".join(lines)
