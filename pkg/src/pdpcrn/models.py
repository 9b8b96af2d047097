"""MIMO enhancement models that map noisy multichannel spectra to clean ones.

Input and output are channel-stacked real/imaginary STFT planes
(B, 2M, T, F). The main model runs a five-layer causal conv encoder, a
stack of mixing blocks - two parallel branches (DPRNN + causal attention,
and depthwise-conv + DPRNN) tied together by sigmoid interaction gates -
and a mirrored transposed-conv decoder fed by concatenated skips. The
baseline keeps the same encoder/decoder but swaps every mixing block for
one plain DPRNN module.
"""

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tz
from .layers import (
    BatchNorm2d,
    BiLSTM,
    CausalSelfAttention,
    Conv2d,
    ConvTranspose2d,
    DepthwiseConv2dTime,
    LSTM,
    LayerNorm,
    Linear,
    Module,
    gelu,
)

VARIANTS = ("PDPCRN", "DPCRN")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    mics: int = 16
    encoder_channels: tuple = (32, 32, 32, 64, 80)
    kernels: tuple = ((2, 5), (2, 3), (2, 3), (2, 3), (2, 3))
    strides: tuple = ((1, 2), (1, 2), (1, 1), (1, 1), (1, 1))
    mixing_blocks: int = 2
    dprnn_hidden: int = 80
    attention_heads: int = 50
    attention_head_dim: int = 2
    depthwise_kernel: tuple = (1, 3)
    bi_interaction: bool = True
    variant: str = "PDPCRN"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        depth = len(self.encoder_channels)
        if len(self.kernels) != depth or len(self.strides) != depth:
            raise ModelError("encoder_channels, kernels and strides must align")
        if self.mics < 1:
            raise ModelError("need at least one input channel")
        if self.dprnn_hidden % 2:
            raise ModelError("dprnn_hidden must be even (split across two directions)")

    def to_dict(self) -> dict:
        return {
            "mics": self.mics,
            "encoder_channels": list(self.encoder_channels),
            "kernels": [list(k) for k in self.kernels],
            "strides": [list(s) for s in self.strides],
            "mixing_blocks": self.mixing_blocks,
            "dprnn_hidden": self.dprnn_hidden,
            "attention_heads": self.attention_heads,
            "attention_head_dim": self.attention_head_dim,
            "depthwise_kernel": list(self.depthwise_kernel),
            "bi_interaction": self.bi_interaction,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder_channels"] = tuple(d["encoder_channels"])
        d["kernels"] = tuple(tuple(k) for k in d["kernels"])
        d["strides"] = tuple(tuple(s) for s in d["strides"])
        d["depthwise_kernel"] = tuple(d["depthwise_kernel"])
        return cls(**d)


def tiny_config(mics=2, bi_interaction=True, variant="PDPCRN") -> ModelConfig:
    """Small geometry for smoke tests and gradient checks."""
    return ModelConfig(
        mics=mics,
        encoder_channels=(8, 8, 8, 8, 16),
        dprnn_hidden=16,
        attention_heads=8,
        attention_head_dim=2,
        bi_interaction=bi_interaction,
        variant=variant,
    )


class Encoder(Module):
    """Causal conv -> BN -> GELU stack; keeps every activation as a skip."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        chans = (2 * cfg.mics,) + tuple(cfg.encoder_channels)
        self.depth = len(cfg.encoder_channels)
        for i in range(self.depth):
            setattr(self, f"conv{i}", Conv2d(chans[i], chans[i + 1], cfg.kernels[i], rng, cfg.strides[i]))
            setattr(self, f"bn{i}", BatchNorm2d(chans[i + 1]))

    def forward(self, x):
        skips = []
        h = x
        for i in range(self.depth):
            h = gelu(getattr(self, f"bn{i}")(getattr(self, f"conv{i}")(h)))
            skips.append(h)
        return h, skips


class Decoder(Module):
    """Mirrors the encoder with causal transposed convs.

    Layer i consumes the previous output concatenated with the matching
    encoder skip; the last layer is linear and emits the 2M output planes.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        enc = tuple(cfg.encoder_channels)
        self.depth = len(enc)
        outs = tuple(enc[-2 :: -1]) + (2 * cfg.mics,)
        for i in range(self.depth):
            j = self.depth - 1 - i  # mirrored encoder layer
            cin = 2 * enc[j]  # skip concatenation doubles the width
            setattr(self, f"deconv{i}", ConvTranspose2d(cin, outs[i], cfg.kernels[j], rng, cfg.strides[j]))
            if i < self.depth - 1:
                setattr(self, f"bn{i}", BatchNorm2d(outs[i]))

    def forward(self, latent, skips):
        h = latent
        for i in range(self.depth):
            skip = skips[self.depth - 1 - i]
            if h.shape != skip.shape:
                raise ModelError(f"skip {i} shape {skip.shape} does not match {h.shape}")
            h = getattr(self, f"deconv{i}")(tz.concat([h, skip], axis=1))
            if i < self.depth - 1:
                h = gelu(getattr(self, f"bn{i}")(h))
        return h


class Dprnn(Module):
    """Dual-path pass over a (B, C, T, F) block.

    Intra: bidirectional LSTM along frequency per frame, projected back to
    C, layer-normed, residual. Inter: causal LSTM along time per frequency
    bin, same projection/norm/residual.
    """

    def __init__(self, channels, intra_hidden, inter_hidden, rng):
        super().__init__()
        self.intra = BiLSTM(channels, intra_hidden, rng)
        self.intra_proj = Linear(2 * intra_hidden, channels, rng)
        self.intra_norm = LayerNorm(channels)
        self.inter = LSTM(channels, inter_hidden, rng)
        self.inter_proj = Linear(inter_hidden, channels, rng)
        self.inter_norm = LayerNorm(channels)

    def forward(self, x):
        b, c, t, f = x.shape
        seq = x.transpose(0, 2, 3, 1).reshape(b * t, f, c)
        seq = self.intra_norm(self.intra_proj(self.intra(seq))) + seq
        seq = seq.reshape(b, t, f, c).transpose(0, 2, 1, 3).reshape(b * f, t, c)
        out, _ = self.inter(seq)
        seq = self.inter_norm(self.inter_proj(out)) + seq
        return seq.reshape(b, f, t, c).transpose(0, 3, 2, 1)


class GateConv(Module):
    """2x2 conv (causal in time, padded in frequency) -> BN -> GELU -> sigmoid."""

    def __init__(self, channels, rng):
        super().__init__()
        self.conv = Conv2d(channels, channels, (2, 2), rng)
        self.bn = BatchNorm2d(channels)

    def forward(self, x):
        return tz.sigmoid(gelu(self.bn(self.conv(x))))


def _to_time_seq(x):
    """(B, C, T, F) -> (B*F, T, C) so attention runs along time."""
    b, c, t, f = x.shape
    return x.transpose(0, 3, 2, 1).reshape(b * f, t, c)


def _from_time_seq(x, b, c, t, f):
    return x.reshape(b, f, t, c).transpose(0, 3, 2, 1)


class MixingBlock(Module):
    """Two parallel branches over the encoder latent, optionally interacting.

    Left: DPRNN, then causal self-attention along time. Right: depthwise
    causal conv along time, then DPRNN. With interaction on, a gate made
    from the right branch scales the left branch's attention-value tensor,
    and a gate made from the attention output scales the right branch.
    The block output is the sum of both branches.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c = cfg.encoder_channels[-1]
        hid = cfg.dprnn_hidden
        self.left_rnn = Dprnn(c, hid // 2, hid, rng)
        # depthwise_kernel (1, k) = per-channel, k causal taps along time
        self.depthwise = DepthwiseConv2dTime(c, cfg.depthwise_kernel[1], rng)
        self.right_rnn = Dprnn(c, hid // 2, hid, rng)
        self.attn = CausalSelfAttention(c, cfg.attention_heads, cfg.attention_head_dim, rng)
        self.bi = cfg.bi_interaction
        if self.bi:
            self.channel_gate = GateConv(c, rng)
            self.spatial_gate = GateConv(c, rng)

    def forward(self, x):
        b, c, t, f = x.shape
        left = self.left_rnn(x)
        right = self.right_rnn(self.depthwise(x))
        value = None
        if self.bi:
            value = _to_time_seq(left * self.channel_gate(right))
        att = self.attn(_to_time_seq(left), value_input=value)
        left = _from_time_seq(att, b, c, t, f)
        if self.bi:
            right = right * self.spatial_gate(left)
        return left + right


class Model(Module):
    """Encoder -> bottleneck blocks -> decoder over (B, 2M, T, F) planes."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.block_names = []
        for i in range(cfg.mixing_blocks):
            if cfg.variant == "PDPCRN":
                blk = MixingBlock(cfg, rng)
            else:  # plain dual-path bottleneck, full-width in both directions
                c = cfg.encoder_channels[-1]
                blk = Dprnn(c, cfg.dprnn_hidden, cfg.dprnn_hidden, rng)
            name = f"block{i}"
            setattr(self, name, blk)
            self.block_names.append(name)
        self.decoder = Decoder(cfg, rng)

    def forward(self, x):
        if x.shape[1] != 2 * self.cfg.mics:
            raise ModelError(
                f"expected {2 * self.cfg.mics} input planes for {self.cfg.mics} mics, "
                f"got {x.shape[1]}"
            )
        latent, skips = self.encoder(x)
        for name in self.block_names:
            latent = getattr(self, name)(latent)
        return self.decoder(latent, skips)


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    return Model(cfg, np.random.default_rng(seed))


def build_dpcrn_baseline(cfg: ModelConfig, hidden: int = 128, seed: int = 0) -> Model:
    """Baseline with the same encoder/decoder and a plain dual-path bottleneck."""
    return build_model(replace(cfg, variant="DPCRN", dprnn_hidden=hidden), seed)


def structural_hash(model: Model) -> int:
    """u64 over the config and every parameter/buffer name and shape."""
    parts = [json.dumps(model.cfg.to_dict(), sort_keys=True)]
    for name, p in model.named_parameters():
        parts.append(f"{name}:{tuple(p.shape)}")
    for name, b in model.named_buffers():
        parts.append(f"{name}:{tuple(b.shape)}")
    digest = hashlib.sha256("|".join(parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")
