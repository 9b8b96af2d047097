"""Analytic parameter and FLOP accounting for the enhancement models.

Counting conventions (fixed so the two variants are compared on equal
terms):

  * one multiply-accumulate = 2 FLOPs
  * plain elementwise ops (add, multiply, mask) = 1 FLOP per element
  * softmax = 5 FLOPs per element
  * sigmoid / tanh = 4, exact GELU = 5 (transcendental + scale/shift)
  * batch norm at inference = 2 per element (folded scale + shift)
  * layer norm = 8 per element (center, variance, rsqrt spread, affine)
  * attention scores are counted dense over the full T x T square

Counts cover the network only; the shared STFT front end is excluded.
FLOPs are reported for a mono-duration input at 16 kHz using the same
frame geometry as the front end (400/200), batch 1.
"""

from dataclasses import dataclass

from .layers import (
    BiLSTM,
    CausalSelfAttention,
    Conv2d,
    ConvTranspose2d,
    DepthwiseConv2dTime,
    Linear,
    LSTM,
)
from .models import Dprnn, MixingBlock, Model
from .stft import FRAME, HOP, NBINS

FS = 16000

FLOPS_PER_MAC = 2
FLOPS_SOFTMAX = 5
FLOPS_SIGMOID = 4
FLOPS_TANH = 4
FLOPS_GELU = 5
FLOPS_BN = 2
FLOPS_LN = 8

# reference budgets the implementation is expected to land within +-15% of
REFERENCE_PARAM_BUDGETS = {"PDPCRN": 790_780, "DPCRN": 814_600}


@dataclass
class ProfileRow:
    name: str
    params: int
    flops: int


def count_params(module) -> int:
    return int(sum(p.data.size for _, p in module.named_parameters()))


def param_rows(model, depth: int = 2):
    """(prefix, count) pairs grouping parameter names by their first parts."""
    groups = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        groups[key] = groups.get(key, 0) + p.data.size
    return [(k, int(v)) for k, v in groups.items()]


# ---------------------------------------------------------------------------
# per-layer FLOP formulas


def conv2d_flops(layer: Conv2d, t: int, f: int):
    """Returns (flops, t_out, f_out) for the causal-padded conv."""
    cout, cin, kt, kf = layer.w.shape
    st, sf = layer.stride
    t_out = (t - 1) // st + 1
    f_out = (f - 1) // sf + 1
    macs = t_out * f_out * cout * cin * kt * kf
    return FLOPS_PER_MAC * macs + t_out * f_out * cout, t_out, f_out


def conv_transpose2d_flops(layer: ConvTranspose2d, t: int, f: int):
    """Every input element scatters through the full kernel."""
    cin, cout, kt, kf = layer.w.shape
    st, sf = layer.stride
    t_out = (t - 1) * st + 1
    f_out = (f - 1) * sf + 1
    macs = t * f * cin * cout * kt * kf
    return FLOPS_PER_MAC * macs + t_out * f_out * cout, t_out, f_out


def depthwise_flops(layer: DepthwiseConv2dTime, t: int, f: int) -> int:
    macs = t * f * layer.channels * layer.kt
    return FLOPS_PER_MAC * macs + t * f * layer.channels


def linear_flops(layer: Linear, positions: int) -> int:
    din, dout = layer.w.shape
    out = FLOPS_PER_MAC * positions * din * dout
    if layer.b is not None:
        out += positions * dout
    return out


def lstm_flops(layer: LSTM, seqs: int, steps: int) -> int:
    """Gate matmuls plus the pointwise cell update, per sequence step."""
    din = layer.w.shape[0]
    h = layer.hidden
    gates = FLOPS_PER_MAC * 4 * h * (din + h) + 2 * 4 * h  # two bias-style adds
    point = 3 * h * FLOPS_SIGMOID + 2 * h * FLOPS_TANH + 5 * h  # cell + hidden update
    return seqs * steps * (gates + point)


def bilstm_flops(layer: BiLSTM, seqs: int, steps: int) -> int:
    return lstm_flops(layer.fwd, seqs, steps) + lstm_flops(layer.bwd, seqs, steps)


def attention_flops(layer: CausalSelfAttention, seqs: int, t: int) -> int:
    dim = layer.q_proj.w.shape[0]
    inner = layer.heads * layer.head_dim
    out = 3 * linear_flops(layer.q_proj, seqs * t)  # q, k, v share geometry
    out += seqs * t * inner  # query scaling
    square = seqs * layer.heads * t * t
    out += FLOPS_PER_MAC * square * layer.head_dim  # scores
    out += square  # causal mask add
    out += FLOPS_SOFTMAX * square
    out += FLOPS_PER_MAC * square * layer.head_dim  # weights @ values
    out += linear_flops(layer.out_proj, seqs * t)
    return out


def dprnn_flops(block: Dprnn, t: int, f: int) -> int:
    c = block.intra_proj.w.shape[1]
    out = bilstm_flops(block.intra, t, f)
    out += linear_flops(block.intra_proj, t * f)
    out += (FLOPS_LN + 1) * t * f * c  # norm + residual
    out += lstm_flops(block.inter, f, t)
    out += linear_flops(block.inter_proj, t * f)
    out += (FLOPS_LN + 1) * t * f * c
    return out


def gate_flops(gate, t: int, f: int) -> int:
    conv, _, _ = conv2d_flops(gate.conv, t, f)
    c = gate.conv.w.shape[0]
    return conv + (FLOPS_BN + FLOPS_GELU + FLOPS_SIGMOID) * t * f * c


def mixing_block_flops(block: MixingBlock, t: int, f: int) -> int:
    c = block.left_rnn.intra_proj.w.shape[1]
    out = dprnn_flops(block.left_rnn, t, f)
    out += depthwise_flops(block.depthwise, t, f)
    out += dprnn_flops(block.right_rnn, t, f)
    if block.bi:
        out += gate_flops(block.channel_gate, t, f) + t * f * c  # gate product
    out += attention_flops(block.attn, f, t)
    if block.bi:
        out += gate_flops(block.spatial_gate, t, f) + t * f * c
    out += t * f * c  # branch sum
    return out


# ---------------------------------------------------------------------------
# whole-model walk


def frames_for(seconds: float) -> int:
    n = int(round(seconds * FS))
    if n < FRAME:
        raise ValueError("input shorter than one analysis frame")
    return (n - FRAME) // HOP + 1


def profile(model: Model, seconds: float = 1.0) -> dict:
    """Walks the module tree and returns params/FLOPs with per-layer rows."""
    t, f = frames_for(seconds), NBINS
    rows = []

    enc = model.encoder
    for i in range(enc.depth):
        conv = getattr(enc, f"conv{i}")
        flops, t, f = conv2d_flops(conv, t, f)
        cout = conv.w.shape[0]
        flops += (FLOPS_BN + FLOPS_GELU) * t * f * cout
        layer_params = count_params(conv) + count_params(getattr(enc, f"bn{i}"))
        rows.append(ProfileRow(f"encoder.conv{i}", layer_params, flops))

    for name in model.block_names:
        block = getattr(model, name)
        if isinstance(block, MixingBlock):
            flops = mixing_block_flops(block, t, f)
        else:
            flops = dprnn_flops(block, t, f)
        rows.append(ProfileRow(name, count_params(block), flops))

    dec = model.decoder
    for i in range(dec.depth):
        deconv = getattr(dec, f"deconv{i}")
        flops, t, f = conv_transpose2d_flops(deconv, t, f)
        layer_params = count_params(deconv)
        if i < dec.depth - 1:
            cout = deconv.w.shape[1]
            flops += (FLOPS_BN + FLOPS_GELU) * t * f * cout
            layer_params += count_params(getattr(dec, f"bn{i}"))
        rows.append(ProfileRow(f"decoder.deconv{i}", layer_params, flops))

    return {
        "params": count_params(model),
        "flops": int(sum(r.flops for r in rows)),
        "frames": frames_for(seconds),
        "seconds": seconds,
        "rows": rows,
    }


def param_report(model: Model, reference_total: int = None) -> str:
    """Markdown parameter table; itemizes the residual against a reference."""
    lines = ["| layer | params |", "| --- | ---: |"]
    total = count_params(model)
    for name, n in param_rows(model):
        lines.append(f"| {name} | {n} |")
    lines.append(f"| **total** | **{total}** |")
    if reference_total is not None:
        gap = total - reference_total
        lines.append(f"| reference | {reference_total} |")
        lines.append(f"| residual | {gap:+d} ({100.0 * gap / reference_total:+.2f}%) |")
    return "\n".join(lines)


def comparison(profiles: dict, seconds: float = 1.0) -> str:
    """Markdown table over named profile() results (same duration)."""
    lines = [
        f"| model | params | FLOPs ({seconds:g} s) | frames |",
        "| --- | ---: | ---: | ---: |",
    ]
    for name, prof in profiles.items():
        lines.append(f"| {name} | {prof['params']} | {prof['flops']} | {prof['frames']} |")
    return "\n".join(lines)
