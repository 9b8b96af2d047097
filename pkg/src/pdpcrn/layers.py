"""Neural-network layers built on the tape-based tensors.

Feature maps are laid out (batch, channels, time, freq); recurrent
inputs are (time, batch, features). Convolutions, LSTM sequences and
attention run as fused ops with hand-written backward passes so the
inner loops stay in BLAS / the compiled kernels; everything else is
composed from primitive tensor ops and differentiates automatically.
All time-axis operators are causal: output frame t never reads inputs
after t.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from . import tensor as tz
from .tensor import Tensor, record_op

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# module base


class Module:
    """Container with automatic, insertion-ordered parameter discovery."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:  # replacing a tracked entry with a plain value untracks it
            self._params.pop(name, None)
            self._modules.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self):
        object.__setattr__(self, "training", True)
        for m in self._modules.values():
            m.train()
        return self

    def eval(self):
        object.__setattr__(self, "training", False)
        for m in self._modules.values():
            m.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state["buffer." + name] = b.copy()
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            src = state[name]
            if src.shape != p.data.shape:
                raise ValueError(f"{name}: shape {src.shape} != {p.data.shape}")
            p.data = src.astype(p.data.dtype, copy=True)
        for name, b in self.named_buffers():
            src = state["buffer." + name]
            b[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, bound, dtype):
    return Tensor(
        rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True, dtype=dtype
    )


def _zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


# ---------------------------------------------------------------------------
# fused ops


def conv2d_op(x: Tensor, w: Tensor, b: Tensor, stride, pad) -> Tensor:
    """Valid 2-D convolution (cross-correlation) after constant zero padding.

    x (B, C, T, F), w (Cout, C, kt, kf), b (Cout,), stride (st, sf),
    pad ((tl, tr), (fl, fr)).
    """
    st, sf = stride
    (tl, tr), (fl, fr) = pad
    cout, cin, kt, kf = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (tl, tr), (fl, fr)))
    cols = K.im2col(xp, kt, kf, st, sf)  # (B, T', F', C*kt*kf)
    w2 = w.data.reshape(cout, -1)
    y = cols @ w2.T + b.data
    out_data = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    out = tz.op_output(out_data, x, w, b)
    bsz, t_out, f_out, _ = cols.shape
    tp, fp = xp.shape[2], xp.shape[3]

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # (B, T', F', Cout)
        g2 = gt.reshape(-1, cout)
        c2 = cols.reshape(-1, cols.shape[-1])
        gw = (g2.T @ c2).reshape(w.shape)
        gb = g2.sum(axis=0)
        gcols = gt @ w2  # (B, T', F', C*kt*kf)
        gxp = K.col2im(gcols, cin, tp, fp, kt, kf, st, sf)
        gx = gxp[:, :, tl : tl + x.shape[2], fl : fl + x.shape[3]]
        return np.ascontiguousarray(gx), gw, gb

    return record_op(out, (x, w, b), backward)


def lstm_seq_op(x: Tensor, w: Tensor, u: Tensor, b: Tensor, h0=None, c0=None):
    """Full unidirectional LSTM pass.

    x (T, B, D), w (D, 4H), u (H, 4H), b (4H,); gate order (i, f, g, o).
    Returns (hidden states (T, B, H), (h_T, c_T)); the final state is a
    detached numpy pair (no gradient flows back through a carried state).
    """
    t_len, bsz, _ = x.shape
    hdim = u.shape[0]
    dtype = x.dtype
    xw = x.data @ w.data + b.data  # (T, B, 4H) input contributions
    hs = np.zeros((t_len + 1, bsz, hdim), dtype=dtype)
    cs = np.zeros((t_len + 1, bsz, hdim), dtype=dtype)
    if h0 is not None:
        hs[0] = h0
    if c0 is not None:
        cs[0] = c0
    gates = np.empty((t_len, bsz, 4 * hdim), dtype=dtype)
    for t in range(t_len):
        z = xw[t] + hs[t] @ u.data
        hs[t + 1], cs[t + 1], gates[t] = K.lstm_step_forward(z, cs[t])
    out = tz.op_output(np.ascontiguousarray(hs[1:]), x, w, u, b)

    def backward(g):
        dz_all = np.empty_like(gates)
        dh = np.zeros((bsz, hdim), dtype=dtype)
        dc = np.zeros((bsz, hdim), dtype=dtype)
        ut = u.data.T
        for t in range(t_len - 1, -1, -1):
            dh = dh + g[t]
            dz, dc = K.lstm_step_backward(dh, dc, gates[t], cs[t], cs[t + 1])
            dz_all[t] = dz
            dh = dz @ ut
        dz2 = dz_all.reshape(-1, 4 * hdim)
        x2 = x.data.reshape(-1, x.shape[-1])
        h2 = hs[:-1].reshape(-1, hdim)
        gw = x2.T @ dz2
        gu = h2.T @ dz2
        gb = dz2.sum(axis=0)
        gx = (dz_all @ w.data.T).reshape(x.shape)
        return gx, gw, gu, gb

    return record_op(out, (x, w, u, b), backward), (hs[-1].copy(), cs[-1].copy())


def causal_attention_op(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention with a strict causal mask.

    q, k (N, T, d), v (N, T, dv); query t attends to keys 0..t.
    """
    n, t_len, d = q.shape
    scale = 1.0 / math.sqrt(d)
    s = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    mask = np.triu(np.ones((t_len, t_len), dtype=bool), k=1)
    s[:, mask] = -1e30
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = tz.op_output(np.matmul(p, v.data), q, k, v)

    def backward(g):
        gv = np.matmul(np.swapaxes(p, -1, -2), g)
        gp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        inner = (gp * p).sum(axis=-1, keepdims=True)
        gs = p * (gp - inner)  # masked entries have p == 0, so gs == 0 there
        gq = np.matmul(gs, k.data) * scale
        gk = np.matmul(np.swapaxes(gs, -1, -2), q.data) * scale
        return gq, gk, gv

    return record_op(out, (q, k, v), backward)


def overlap_add_op(frames: Tensor, hop: int) -> Tensor:
    """Differentiable overlap-add of (..., N, W) frames with the given hop."""
    out = tz.op_output(K.overlap_add(frames.data, hop), frames)
    n, w = frames.shape[-2], frames.shape[-1]

    def backward(g):
        idx = np.arange(n)[:, None] * hop + np.arange(w)[None, :]
        return (np.ascontiguousarray(g[..., idx]),)

    return record_op(out, (frames,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form, 0.5 * x * (1 + erf(x / sqrt(2)))."""
    return x * 0.5 * (tz.erf(x * (1.0 / SQRT2)) + 1.0)


# ---------------------------------------------------------------------------
# layers


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        dtype = tz.get_default_dtype()
        bound = 1.0 / math.sqrt(in_dim)
        self.w = _uniform(rng, (in_dim, out_dim), bound, dtype)
        self.b = _zeros_param((out_dim,), dtype) if bias else None

    def forward(self, x):
        y = x @ self.w
        return y + self.b if self.b is not None else y


class Conv2d(Module):
    """Causal conv block: left-pads time by kt-1, splits kf-1 across freq."""

    def __init__(self, cin, cout, kernel, rng, stride=(1, 1)):
        super().__init__()
        kt, kf = kernel
        dtype = tz.get_default_dtype()
        bound = 1.0 / math.sqrt(cin * kt * kf)
        self.w = _uniform(rng, (cout, cin, kt, kf), bound, dtype)
        self.b = _zeros_param((cout,), dtype)
        self.stride = tuple(stride)
        fl = (kf - 1) // 2
        self.pad = ((kt - 1, 0), (fl, kf - 1 - fl))

    def forward(self, x):
        return conv2d_op(x, self.w, self.b, self.stride, self.pad)


class ConvTranspose2d(Module):
    """Causal transposed conv: zero-stuffs freq by the stride, then runs the
    flipped kernel as a causal conv with the complementary freq padding.

    In frequency this is the exact adjoint of the matching ``Conv2d``;
    in time the adjoint is delayed by kt-1 frames so the result stays
    causal.
    """

    def __init__(self, cin, cout, kernel, rng, stride=(1, 1)):
        super().__init__()
        kt, kf = kernel
        dtype = tz.get_default_dtype()
        bound = 1.0 / math.sqrt(cin * kt * kf)
        self.w = _uniform(rng, (cin, cout, kt, kf), bound, dtype)
        self.b = _zeros_param((cout,), dtype)
        self.kernel = (kt, kf)
        self.stride = tuple(stride)
        fl = (kf - 1) // 2
        self.pad_f = (kf - 1 - fl, kf - 1 - (kf - 1 - fl))

    def forward(self, x):
        kt, kf = self.kernel
        st, sf = self.stride
        if st != 1:
            raise ValueError("time stride must stay 1 to preserve frame rate")
        xd = tz.dilate(x, axis=3, step=sf)
        wf = tz.flip(self.w, axis=(2, 3)).transpose(1, 0, 2, 3)
        return conv2d_op(xd, wf, self.b, (1, 1), ((kt - 1, 0), self.pad_f))


class DepthwiseConv2dTime(Module):
    """Per-channel causal FIR along the time axis (kernel kt x 1)."""

    def __init__(self, channels, kt, rng):
        super().__init__()
        dtype = tz.get_default_dtype()
        bound = 1.0 / math.sqrt(kt)
        self.w = _uniform(rng, (channels, kt), bound, dtype)
        self.b = _zeros_param((channels,), dtype)
        self.kt = kt
        self.channels = channels

    def forward(self, x):
        t_len = x.shape[2]
        xp = tz.pad(x, [(0, 0), (0, 0), (self.kt - 1, 0), (0, 0)])
        y = None
        for k in range(self.kt):
            tap = self.w[:, k].reshape(1, self.channels, 1, 1)
            term = xp[:, :, k : k + t_len, :] * tap
            y = term if y is None else y + term
        return y + self.b.reshape(1, self.channels, 1, 1)


class BatchNorm2d(Module):
    """Per-channel normalization over (batch, time, freq).

    Training uses batch statistics and folds them into running estimates
    as running = decay * running + (1 - decay) * batch (population
    variance); eval normalizes with the running ones.
    """

    def __init__(self, channels, eps=1e-5, decay=0.9):
        super().__init__()
        dtype = tz.get_default_dtype()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True, dtype=dtype)
        self.beta = _zeros_param((channels,), dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.eps = eps
        self.decay = decay
        self.channels = channels

    def forward(self, x):
        c = self.channels
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mu) * (x - mu)).mean(axis=(0, 2, 3), keepdims=True)
            m = 1.0 - self.decay
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu.data.reshape(c)
            self.running_var *= 1.0 - m
            self.running_var += m * var.data.reshape(c)
        else:
            dtype = x.dtype
            mu = Tensor(self.running_mean.reshape(1, c, 1, 1).astype(dtype), dtype=dtype)
            var = Tensor(self.running_var.reshape(1, c, 1, 1).astype(dtype), dtype=dtype)
        xn = (x - mu) / tz.sqrt(var + self.eps)
        g = self.gamma.reshape(1, c, 1, 1)
        b = self.beta.reshape(1, c, 1, 1)
        return xn * g + b


class LayerNorm(Module):
    """Normalizes the last axis; affine over the same axis."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        dtype = tz.get_default_dtype()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True, dtype=dtype)
        self.beta = _zeros_param((dim,), dtype)
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=-1, keepdims=True)
        return d / tz.sqrt(var + self.eps) * self.gamma + self.beta


class LSTM(Module):
    """Single-layer LSTM over (B, L, D) sequences.

    Forget-gate bias starts at 1 so cells retain state early in training.
    Returns (outputs (B, L, H), (h, c)); a state pair may be carried in.
    """

    def __init__(self, in_dim, hidden, rng):
        super().__init__()
        dtype = tz.get_default_dtype()
        bound = 1.0 / math.sqrt(hidden)
        self.w = _uniform(rng, (in_dim, 4 * hidden), bound, dtype)
        self.u = _uniform(rng, (hidden, 4 * hidden), bound, dtype)
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden : 2 * hidden] = 1.0
        self.b = Tensor(b, requires_grad=True, dtype=dtype)
        self.hidden = hidden

    def forward(self, x, state=None):
        bsz = x.shape[0]
        h0 = c0 = None
        if state is not None:
            h0, c0 = state
            if h0.shape != (bsz, self.hidden) or c0.shape != (bsz, self.hidden):
                raise ValueError(
                    f"state shape {h0.shape}/{c0.shape} does not match "
                    f"(batch, hidden) = ({bsz}, {self.hidden})"
                )
        out, final = lstm_seq_op(x.transpose(1, 0, 2), self.w, self.u, self.b, h0, c0)
        return out.transpose(1, 0, 2), final


class BiLSTM(Module):
    """Two LSTMs over opposite directions; features concatenated.

    Takes (B, L, D), returns (B, L, 2H); no state is carried across calls
    since the reverse pass would need the whole sequence anyway.
    """

    def __init__(self, in_dim, hidden, rng):
        super().__init__()
        self.fwd = LSTM(in_dim, hidden, rng)
        self.bwd = LSTM(in_dim, hidden, rng)

    def forward(self, x):
        hf, _ = self.fwd(x)
        hb, _ = self.bwd(tz.flip(x, axis=1))
        return tz.concat([hf, tz.flip(hb, axis=1)], axis=2)


class CausalSelfAttention(Module):
    """Multi-head attention over time with a strict causal mask.

    The value stream may be fed from a separate tensor (same shape as
    the queries); by default it is the input itself.
    """

    def __init__(self, dim, heads, head_dim, rng):
        super().__init__()
        inner = heads * head_dim
        self.q_proj = Linear(dim, inner, rng)
        self.k_proj = Linear(dim, inner, rng)
        self.v_proj = Linear(dim, inner, rng)
        self.out_proj = Linear(inner, dim, rng)
        self.heads = heads
        self.head_dim = head_dim

    def _split(self, x):
        b, t, _ = x.shape
        x = x.reshape(b, t, self.heads, self.head_dim)
        return x.transpose(0, 2, 1, 3).reshape(b * self.heads, t, self.head_dim)

    def forward(self, x, value_input=None):
        b, t, _ = x.shape
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(x))
        v = self._split(self.v_proj(value_input if value_input is not None else x))
        y = causal_attention_op(q, k, v)
        y = y.reshape(b, self.heads, t, self.head_dim).transpose(0, 2, 1, 3)
        y = y.reshape(b, t, self.heads * self.head_dim)
        return self.out_proj(y)
