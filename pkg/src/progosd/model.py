"""Model blocks: trainable acoustic encoder, frame-level speaker embedder,
speaker cross-attention fusion, temporal masking, and the two Conformer-style
regression decoders.

The whole pipeline is frame-synchronous on the 20 ms grid: every block maps
(T, D_in) to (T, D_out) with the same T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import frame_grid, frame_signal, WIN_SAMPLES, N_MELS
from .autodiff import (ConfigError, Parameter, ShapeError, Tensor,
                       depthwise_conv1d, layer_norm, linear,
                       multi_head_attention, mse_loss)


class AlignmentError(ValueError):
    """Frame counts of two tracks that must share a grid disagree."""


@dataclass
class ModelConfig:
    d_model: int = 64
    d_spk: int = 32
    n_enc: int = 2
    n_dec: int = 2
    heads: int = 4
    conv_kernel: int = 15
    ff_mult: int = 2
    encoder: str = "trainable"     # or "ingested"
    adapter: bool = False          # linear adapter for ingested features
    d_ingested: int = 64
    num_aux_speakers: int = 0      # >0 enables the speaker-classification head

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by {self.heads} heads"
            )
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv kernel must be odd, got {self.conv_kernel}")


def _xavier(rng, d_in, d_out):
    s = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-s, s, size=(d_in, d_out))


class Module:
    def __init__(self):
        self._params: list[Parameter] = []
        self._children: list[Module] = []

    def param(self, data, name) -> Parameter:
        p = Parameter(data, name)
        self._params.append(p)
        return p

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out


class Linear(Module):
    def __init__(self, rng, d_in, d_out, name, zero_init=False):
        super().__init__()
        w0 = np.zeros((d_in, d_out)) if zero_init else _xavier(rng, d_in, d_out)
        self.w = self.param(w0, f"{name}.w")
        self.b = self.param(np.zeros((1, d_out)), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim, name):
        super().__init__()
        self.gain = self.param(np.ones((1, dim)), f"{name}.gain")
        self.shift = self.param(np.zeros((1, dim)), f"{name}.shift")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift)


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model, heads, name, zero_init_out=False):
        super().__init__()
        self.heads = heads
        self.wq = self.param(_xavier(rng, d_model, d_model), f"{name}.wq")
        self.wk = self.param(_xavier(rng, d_model, d_model), f"{name}.wk")
        self.wv = self.param(_xavier(rng, d_model, d_model), f"{name}.wv")
        w_out = np.zeros((d_model, d_model)) if zero_init_out \
            else _xavier(rng, d_model, d_model)
        self.wo = self.param(w_out, f"{name}.wo")
        self.bo = self.param(np.zeros((1, d_model)), f"{name}.bo")

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        return multi_head_attention(query, key, value, self.heads,
                                    self.wq, self.wk, self.wv, self.wo, self.bo)


class FeedForward(Module):
    def __init__(self, rng, d_model, mult, name):
        super().__init__()
        self.up = self.child(Linear(rng, d_model, d_model * mult, f"{name}.up"))
        self.down = self.child(Linear(rng, d_model * mult, d_model, f"{name}.down"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(self.up(x).swish())


class EncoderBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, rng, d_model, heads, mult, name):
        super().__init__()
        self.ln1 = self.child(LayerNorm(d_model, f"{name}.ln1"))
        self.mha = self.child(MultiHeadAttention(rng, d_model, heads, f"{name}.mha"))
        self.ln2 = self.child(LayerNorm(d_model, f"{name}.ln2"))
        self.ff = self.child(FeedForward(rng, d_model, mult, f"{name}.ff"))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.mha(h, h, h)
        return x + self.ff(self.ln2(x))


class AcousticEncoder(Module):
    """Strided framing front end plus self-attention blocks (maps raw samples
    to the 20 ms grid), or a pass-through/adapter for ingested features."""

    def __init__(self, rng, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.encoder == "trainable":
            self.front = self.child(
                Linear(rng, WIN_SAMPLES, config.d_model, "enc.front"))
            self.blocks = [
                self.child(EncoderBlock(rng, config.d_model, config.heads,
                                        config.ff_mult, f"enc.block{i}"))
                for i in range(config.n_enc)
            ]
        elif config.encoder == "ingested":
            self.adapter = self.child(
                Linear(rng, config.d_ingested, config.d_model, "enc.adapter")
            ) if config.adapter else None
        else:
            raise ConfigError(f"unknown encoder kind '{config.encoder}'")

    def __call__(self, samples=None, features=None, expected_frames=None) -> Tensor:
        if self.config.encoder == "trainable":
            x = Tensor(frame_signal(samples))
            x = self.front(x)
            for block in self.blocks:
                x = block(x)
            return x
        feats = np.asarray(features, dtype=np.float64)
        if expected_frames is not None and feats.shape[0] != expected_frames:
            raise AlignmentError(
                f"ingested features have {feats.shape[0]} frames, "
                f"labels expect {expected_frames}"
            )
        x = Tensor(feats)
        if self.adapter is not None:
            return self.adapter(x)
        if feats.shape[1] != self.config.d_model:
            raise ShapeError(
                f"ingested dim {feats.shape[1]} != d_model {self.config.d_model} "
                "and no adapter configured"
            )
        return x


class DilatedTap(Module):
    """Three-tap time convolution at a given dilation with full channel mixing."""

    def __init__(self, rng, d_in, d_out, dilation, name):
        super().__init__()
        self.dilation = dilation
        self.taps = [
            self.child(Linear(rng, d_in, d_out, f"{name}.tap{t}"))
            for t in range(3)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        d = self.dilation
        rows = x.data.shape[0]
        padded = x.pad_rows(d, d)
        out = self.taps[0](padded.slice_rows(0, rows))
        out = out + self.taps[1](padded.slice_rows(d, d + rows))
        out = out + self.taps[2](padded.slice_rows(2 * d, 2 * d + rows))
        return out


class SpeakerEmbedder(Module):
    """Small time-delay stack over Fbank producing frame-level speaker vectors."""

    def __init__(self, rng, config: ModelConfig):
        super().__init__()
        d = config.d_spk
        self.proj = self.child(Linear(rng, N_MELS, d, "spk.proj"))
        self.tap1 = self.child(DilatedTap(rng, d, d, 1, "spk.tap1"))
        self.tap2 = self.child(DilatedTap(rng, d, d, 2, "spk.tap2"))

    def __call__(self, fbank_mat: np.ndarray) -> Tensor:
        if fbank_mat.shape[1] != N_MELS:
            raise ShapeError(
                f"speaker embedder expects {N_MELS}-dim Fbank, got {fbank_mat.shape}"
            )
        x = self.proj(Tensor(np.asarray(fbank_mat, dtype=np.float64))).tanh()
        x = self.tap1(x).tanh()
        return self.tap2(x).tanh()


class SpeakerAttentionFusion(Module):
    """Cross-attention: encoder features query the speaker frames; residual."""

    def __init__(self, rng, config: ModelConfig):
        super().__init__()
        self.kv_proj = self.child(
            Linear(rng, config.d_spk, config.d_model, "fuse.kv"))
        self.mha = self.child(MultiHeadAttention(
            rng, config.d_model, config.heads, "fuse.mha", zero_init_out=True))

    def __call__(self, r_raw: Tensor, r_spk: Tensor) -> Tensor:
        if r_raw.data.shape[0] != r_spk.data.shape[0]:
            raise AlignmentError(
                f"fusion frame mismatch: {r_raw.data.shape[0]} vs "
                f"{r_spk.data.shape[0]}"
            )
        kv = self.kv_proj(r_spk)
        return self.mha(r_raw, kv, kv) + r_raw


def temporal_mask(s_vad: Tensor, r_att: Tensor, hard: bool = False,
                  threshold: float = 0.5, stop_gradient: bool = False) -> Tensor:
    """Gate feature rows by VAD scores.

    Soft mode multiplies row i by score i (differentiable). Hard mode is for
    inference only: rows below the threshold are zeroed, the rest pass
    unscaled.
    """
    if s_vad.data.shape[0] != r_att.data.shape[0]:
        raise AlignmentError(
            f"mask frame mismatch: {s_vad.data.shape[0]} vs {r_att.data.shape[0]}"
        )
    if hard:
        keep = (s_vad.data >= threshold).astype(np.float64)
        return r_att * Tensor(keep)
    gate = s_vad.detach() if stop_gradient else s_vad
    return r_att * gate


class ConformerBlock(Module):
    """Half-step FF, self-attention, depthwise conv, half-step FF, final norm."""

    def __init__(self, rng, config: ModelConfig, name):
        super().__init__()
        d, h, mult = config.d_model, config.heads, config.ff_mult
        self.ln_ff1 = self.child(LayerNorm(d, f"{name}.ln_ff1"))
        self.ff1 = self.child(FeedForward(rng, d, mult, f"{name}.ff1"))
        self.ln_att = self.child(LayerNorm(d, f"{name}.ln_att"))
        self.mha = self.child(MultiHeadAttention(rng, d, h, f"{name}.mha"))
        self.ln_conv = self.child(LayerNorm(d, f"{name}.ln_conv"))
        self.conv_kernel_size = config.conv_kernel
        scale = 1.0 / config.conv_kernel
        self.conv_kernel = self.param(
            rng.uniform(-scale, scale, size=(config.conv_kernel, d)),
            f"{name}.conv_kernel")
        self.conv_point = self.child(Linear(rng, d, d, f"{name}.conv_point"))
        self.ln_ff2 = self.child(LayerNorm(d, f"{name}.ln_ff2"))
        self.ff2 = self.child(FeedForward(rng, d, mult, f"{name}.ff2"))
        self.ln_out = self.child(LayerNorm(d, f"{name}.ln_out"))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.ff1(self.ln_ff1(x)) * Tensor(0.5)
        h = self.ln_att(x)
        x = x + self.mha(h, h, h)
        c = depthwise_conv1d(self.ln_conv(x), self.conv_kernel,
                             self.conv_kernel_size).swish()
        x = x + self.conv_point(c)
        x = x + self.ff2(self.ln_ff2(x)) * Tensor(0.5)
        return self.ln_out(x)


class Decoder(Module):
    """Conformer stack plus per-frame linear-to-one sigmoid head."""

    def __init__(self, rng, config: ModelConfig, name):
        super().__init__()
        self.blocks = [
            self.child(ConformerBlock(rng, config, f"{name}.block{i}"))
            for i in range(config.n_dec)
        ]
        self.head = self.child(Linear(rng, config.d_model, 1, f"{name}.head"))

    def __call__(self, x: Tensor, return_hidden=False):
        for block in self.blocks:
            x = block(x)
        scores = self.head(x).sigmoid()
        if return_hidden:
            return scores, x
        return scores


class ProgressiveModel(Module):
    """Full speaker-aware pipeline with progressive or unified wiring."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([seed, 0x0D])
        self.encoder = self.child(AcousticEncoder(rng, config))
        self.speaker = self.child(SpeakerEmbedder(rng, config))
        self.fusion = self.child(SpeakerAttentionFusion(rng, config))
        self.vad_decoder = self.child(Decoder(rng, config, "vad"))
        self.osd_decoder = self.child(Decoder(rng, config, "osd"))
        # spkMSE variant: project OSD decoder hidden states to speaker space
        self.align_proj = self.child(
            Linear(rng, config.d_model, config.d_spk, "align"))
        if config.num_aux_speakers > 0:
            self.spk_head = self.child(
                Linear(rng, config.d_spk, config.num_aux_speakers, "spk.head"))
        else:
            self.spk_head = None

    def forward(self, samples=None, fbank_mat=None, features=None,
                variant: str = "spkAtt", progressive: bool = True,
                mask_stop_gradient: bool = False,
                mask_hard: bool = False, mask_threshold: float = 0.5) -> dict:
        expected = None
        if samples is not None:
            expected = frame_grid(len(samples))
        r_raw = self.encoder(samples=samples, features=features,
                             expected_frames=expected)
        r_spk = None
        if variant in ("spkAtt", "spkMSE"):
            if fbank_mat is None:
                raise ValueError(f"variant '{variant}' requires Fbank input")
            r_spk = self.speaker(fbank_mat)
        if variant == "spkAtt":
            r_att = self.fusion(r_raw, r_spk)
        elif variant in ("spkMSE", "none"):
            r_att = r_raw
        else:
            raise ConfigError(f"unknown speaker variant '{variant}'")
        s_vad = self.vad_decoder(r_att)
        if progressive:
            r_mask = temporal_mask(s_vad, r_att, hard=mask_hard,
                                   threshold=mask_threshold,
                                   stop_gradient=mask_stop_gradient)
        else:
            r_mask = r_att
        s_osd, osd_hidden = self.osd_decoder(r_mask, return_hidden=True)
        return {
            "r_raw": r_raw,
            "r_spk": r_spk,
            "r_att": r_att,
            "r_mask": r_mask,
            "s_vad": s_vad,
            "s_osd": s_osd,
            "osd_hidden": osd_hidden,
        }

    def speaker_mse_align(self, osd_hidden: Tensor, r_spk: Tensor) -> Tensor:
        if osd_hidden.data.shape[0] != r_spk.data.shape[0]:
            raise AlignmentError(
                f"alignment frame mismatch: {osd_hidden.data.shape[0]} vs "
                f"{r_spk.data.shape[0]}"
            )
        return mse_loss(self.align_proj(osd_hidden), r_spk)

    def aux_speaker_loss(self, r_spk: Tensor, speaker_targets: np.ndarray) -> Tensor:
        """Cross-entropy over frames where exactly one speaker is active."""
        if self.spk_head is None:
            raise ConfigError("aux speaker head not configured")
        mask = speaker_targets >= 0
        n = int(mask.sum())
        if n == 0:
            return Tensor(0.0)
        logits = self.spk_head(r_spk)
        probs = logits.softmax_rows()
        onehot = np.zeros_like(logits.data)
        onehot[mask, speaker_targets[mask]] = 1.0
        return (probs.log() * Tensor(onehot)).sum() * Tensor(-1.0 / n)
