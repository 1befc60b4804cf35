"""Training loops: progressive and unified variants, two-phase
pretrain/finetune, loss assembly, metrics logging, binary checkpoints.

Determinism contract: every random draw is derived from the config seed, so
two runs with identical (config, data) produce identical metrics logs and
bitwise-identical parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import ShapeError, Tensor, mse_loss
from .evaluation import score_windows, prf
from .labels import curate_balanced
from .model import ModelConfig, ProgressiveModel
from .optim import Adam

VARIANT_STRATEGIES = ("p", "u")
VARIANT_SPEAKERS = ("spkAtt", "spkMSE", "none")


class VariantError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


def parse_variant(tag: str) -> tuple[bool, str]:
    """'p-spkAtt' / 'u-OSD-spkMSE' / 'p' -> (progressive, speaker_mode)."""
    parts = [p for p in tag.split("-") if p and p.lower() != "osd"]
    if not parts or parts[0] not in VARIANT_STRATEGIES:
        raise VariantError(
            f"variant '{tag}' must start with one of {VARIANT_STRATEGIES}")
    speaker = parts[1] if len(parts) > 1 else "none"
    if speaker not in VARIANT_SPEAKERS or len(parts) > 2:
        raise VariantError(
            f"variant '{tag}' speaker mode must be one of {VARIANT_SPEAKERS}")
    return parts[0] == "p", speaker


@dataclass
class TrainConfig:
    variant: str = "p-spkAtt"
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    segment_seconds: float = 5.0
    batch_size: int = 8
    pretrain_epochs: int = 5
    epochs: int = 20
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0, 1.0)   # (vad, osd, aux)
    aux_speaker_weight: float = 0.0
    mask_stop_gradient: bool = False
    early_stop_patience: int = 5
    eval_threshold: float = 0.5
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        parse_variant(self.variant)  # validates
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be >= 0")

    @property
    def progressive(self) -> bool:
        return parse_variant(self.variant)[0]

    @property
    def speaker_mode(self) -> str:
        return parse_variant(self.variant)[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def total_loss(s_vad: Tensor, s_osd: Tensor, vad_target: np.ndarray,
               osd_target: np.ndarray, weights=(1.0, 1.0, 1.0),
               aux_loss: Tensor | None = None) -> tuple[Tensor, float, float]:
    """Weighted per-window loss; returns (loss, vad_part, osd_part)."""
    vad_target = np.asarray(vad_target, dtype=np.float64).reshape(-1, 1)
    osd_target = np.asarray(osd_target, dtype=np.float64).reshape(-1, 1)
    if s_vad.data.shape != vad_target.shape or s_osd.data.shape != osd_target.shape:
        raise ShapeError(
            f"loss length mismatch: scores {s_vad.data.shape}/{s_osd.data.shape} "
            f"vs targets {vad_target.shape}/{osd_target.shape}")
    l_vad = mse_loss(s_vad, Tensor(vad_target))
    l_osd = mse_loss(s_osd, Tensor(osd_target))
    loss = l_vad * Tensor(weights[0]) + l_osd * Tensor(weights[1])
    if aux_loss is not None and weights[2] > 0:
        loss = loss + aux_loss * Tensor(weights[2])
    return loss, float(l_vad.data), float(l_osd.data)


def _window_loss(model: ProgressiveModel, window, config: TrainConfig):
    progressive, speaker = config.progressive, config.speaker_mode
    out = model.forward(
        samples=window.samples.astype(np.float64),
        fbank_mat=window.fbank_mat.astype(np.float64),
        variant=speaker, progressive=progressive,
        mask_stop_gradient=config.mask_stop_gradient)
    aux = None
    if speaker == "spkMSE":
        aux = model.speaker_mse_align(out["osd_hidden"], out["r_spk"])
    loss, l_vad, l_osd = total_loss(
        out["s_vad"], out["s_osd"], window.vad, window.osd,
        weights=config.loss_weights, aux_loss=aux)
    if config.aux_speaker_weight > 0 and out["r_spk"] is not None \
            and model.spk_head is not None:
        spk_loss = model.aux_speaker_loss(out["r_spk"], window.spk_targets)
        loss = loss + spk_loss * Tensor(config.aux_speaker_weight)
    return loss, l_vad, l_osd


@dataclass
class TrainResult:
    model: ProgressiveModel
    optimizer: Adam
    metrics: list
    best_dev_f1: float
    best_params: dict           # name -> ndarray copy at the best dev epoch


def _snapshot(model: ProgressiveModel) -> dict:
    return {p.name: p.data.copy() for p in model.parameters()}


def _restore(model: ProgressiveModel, snapshot: dict):
    for p in model.parameters():
        p.data[...] = snapshot[p.name]


def evaluate_dev(model, windows, config: TrainConfig):
    _, osd_c = score_windows(model, windows, config.speaker_mode,
                             config.progressive, config.eval_threshold)
    p, r, f1 = prf(osd_c)
    return p, r, f1


def train(config: TrainConfig, train_windows, dev_windows,
          model: ProgressiveModel | None = None,
          optimizer: Adam | None = None, metrics_path=None,
          start_epoch: int = 0, stop_epoch: int | None = None,
          on_epoch_end=None) -> TrainResult:
    """Single-phase training with per-epoch balanced curation and dev eval."""
    if model is None:
        model = ProgressiveModel(config.model, seed=config.seed)
    params = model.parameters()
    curated0 = curate_balanced(train_windows, seed=config.seed ^ start_epoch)
    steps_per_epoch = max(1, (len(curated0) + config.batch_size - 1)
                          // config.batch_size)
    if optimizer is None:
        optimizer = Adam(params, base_lr=config.base_lr,
                         weight_decay=config.weight_decay,
                         total_steps=steps_per_epoch * config.epochs)
    metrics = []
    best_f1 = -1.0
    best_params = _snapshot(model)
    stale = 0
    step = optimizer.step_count
    log_file = open(metrics_path, "a") if metrics_path else None
    try:
        # config.epochs is the total horizon; a resumed run picks up at
        # start_epoch and finishes the same schedule. stop_epoch simulates
        # (or handles) an interruption before the horizon.
        for epoch in range(start_epoch, min(config.epochs, stop_epoch)
                           if stop_epoch is not None else config.epochs):
            curated = curate_balanced(train_windows, seed=config.seed ^ epoch)
            epoch_loss = epoch_vad = epoch_osd = 0.0
            n_batches = 0
            for b0 in range(0, len(curated), config.batch_size):
                batch = curated[b0:b0 + config.batch_size]
                optimizer.zero_grad()
                b_loss = b_vad = b_osd = 0.0
                for w in batch:
                    loss, l_vad, l_osd = _window_loss(model, w, config)
                    (loss * Tensor(1.0 / len(batch))).backward()
                    b_loss += float(loss.data) / len(batch)
                    b_vad += l_vad / len(batch)
                    b_osd += l_osd / len(batch)
                if not np.isfinite(b_loss):
                    raise DivergenceError(
                        f"loss became non-finite at step {step}")
                lr = optimizer.step()
                step += 1
                epoch_loss += b_loss
                epoch_vad += b_vad
                epoch_osd += b_osd
                n_batches += 1
            dev_p, dev_r, dev_f1 = evaluate_dev(model, dev_windows, config)
            row = {
                "epoch": epoch,
                "step": step,
                "loss": epoch_loss / n_batches,
                "vad_loss": epoch_vad / n_batches,
                "osd_loss": epoch_osd / n_batches,
                "dev_precision": dev_p,
                "dev_recall": dev_r,
                "dev_f1": dev_f1,
                "lr": lr,
            }
            metrics.append(row)
            if log_file:
                log_file.write(json.dumps(row, sort_keys=True) + "\n")
                log_file.flush()
            if on_epoch_end is not None:
                on_epoch_end(epoch, model, optimizer)
            if dev_f1 > best_f1:
                best_f1 = dev_f1
                best_params = _snapshot(model)
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    finally:
        if log_file:
            log_file.close()
    return TrainResult(model=model, optimizer=optimizer, metrics=metrics,
                       best_dev_f1=best_f1, best_params=best_params)


def pretrain_then_finetune(config: TrainConfig, pretrain_corpus,
                           finetune_corpus, metrics_path=None) -> TrainResult:
    """Phase 1 on the simulated-style corpus, phase 2 on the realistic-style
    corpus with a fresh optimizer and schedule.

    Each corpus is a (train_windows, dev_windows) pair.
    """
    model = ProgressiveModel(config.model, seed=config.seed)
    if config.pretrain_epochs > 0:
        pre_cfg = TrainConfig(**{**config.to_dict(),
                                 "epochs": config.pretrain_epochs,
                                 "early_stop_patience": config.pretrain_epochs,
                                 "model": config.model})
        train(pre_cfg, pretrain_corpus[0], pretrain_corpus[1], model=model,
              metrics_path=metrics_path)
    return train(config, finetune_corpus[0], finetune_corpus[1], model=model,
                 metrics_path=metrics_path)


# -- checkpoint format (magic OSDC) -----------------------------------------

CKPT_MAGIC = b"OSDC"
CKPT_VERSION = 1


def _write_blob(f, name: str, arr: np.ndarray):
    nb = name.encode()
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.astype("<f8").tobytes())


def _read_blob(f):
    (nlen,) = struct.unpack("<H", f.read(2))
    name = f.read(nlen).decode()
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(path, model: ProgressiveModel, optimizer: Adam,
                    config: TrainConfig, rng_state: dict | None = None):
    params = model.parameters()
    opt_state = optimizer.state_dict()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        cfg_blob = json.dumps(config.to_dict(), sort_keys=True).encode()
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        f.write(config.config_hash().encode())
        f.write(struct.pack("<Q", opt_state["step_count"]))
        f.write(struct.pack("<I", len(params)))
        for p in params:
            _write_blob(f, p.name, p.data)
        for i, p in enumerate(params):
            _write_blob(f, f"m:{p.name}", opt_state["m"][i])
            _write_blob(f, f"v:{p.name}", opt_state["v"][i])
        rng_blob = json.dumps(rng_state or {}, sort_keys=True).encode()
        f.write(struct.pack("<I", len(rng_blob)))
        f.write(rng_blob)


def load_checkpoint(path):
    """Returns (config, model, optimizer, rng_state) rebuilt from the file."""
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version = f.read(1)[0]
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg_dict = json.loads(f.read(cfg_len).decode())
        stored_hash = f.read(16).decode()
        (step_count,) = struct.unpack("<Q", f.read(8))
        (n_params,) = struct.unpack("<I", f.read(4))
        blobs = dict(_read_blob(f) for _ in range(n_params))
        moments = dict(_read_blob(f) for _ in range(2 * n_params))
        (rng_len,) = struct.unpack("<I", f.read(4))
        rng_state = json.loads(f.read(rng_len).decode())
    cfg_dict["model"] = ModelConfig(**cfg_dict["model"])
    cfg_dict["loss_weights"] = tuple(cfg_dict["loss_weights"])
    config = TrainConfig(**cfg_dict)
    if config.config_hash() != stored_hash:
        raise ValueError(f"{path}: config hash mismatch")
    model = ProgressiveModel(config.model, seed=config.seed)
    params = model.parameters()
    for p in params:
        p.data[...] = blobs[p.name]
    optimizer = Adam(params, base_lr=config.base_lr,
                     weight_decay=config.weight_decay)
    optimizer.load_state_dict({
        "step_count": step_count,
        "m": [moments[f"m:{p.name}"] for p in params],
        "v": [moments[f"v:{p.name}"] for p in params],
    })
    return config, model, optimizer, rng_state


def checkpoint_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]
