"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled extension; selected automatically when
the extension is unavailable or ``PDPCRN_PURE_PYTHON`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kt, kf, st, sf):
    """Unfold (B, C, T, F) into patch rows (B, T_out, F_out, C*kt*kf).

    Patch layout is (c, it, jf) flattened in C order, matching a weight
    of shape (C_out, C, kt, kf) reshaped to (C_out, C*kt*kf).
    """
    b, c, t, f = x.shape
    win = sliding_window_view(x, (kt, kf), axis=(2, 3))  # (B,C,T',F',kt,kf)
    win = win[:, :, ::st, ::sf]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    t_out, f_out = cols.shape[1], cols.shape[2]
    return cols.reshape(b, t_out, f_out, c * kt * kf)


def col2im(cols, c, t_in, f_in, kt, kf, st, sf):
    """Adjoint of ``im2col``: scatter-add patch rows back onto the input grid."""
    b, t_out, f_out, _ = cols.shape
    cols = cols.reshape(b, t_out, f_out, c, kt, kf)
    x = np.zeros((b, c, t_in, f_in), dtype=cols.dtype)
    for it in range(kt):
        for jf in range(kf):
            x[:, :, it : it + st * t_out : st, jf : jf + sf * f_out : sf] += (
                cols[:, :, :, :, it, jf].transpose(0, 3, 1, 2)
            )
    return x


def lstm_step_forward(z, c_prev):
    """One cell update from pre-activations z = (B, 4H) in (i, f, g, o) order.

    Returns (h, c, gates) where gates stacks the post-activation values
    in the same layout, kept for the backward pass.
    """
    h4 = z.shape[-1]
    h = h4 // 4
    gates = np.empty_like(z)
    gates[:, : 2 * h] = 1.0 / (1.0 + np.exp(-z[:, : 2 * h]))  # i, f
    gates[:, 2 * h : 3 * h] = np.tanh(z[:, 2 * h : 3 * h])  # g
    gates[:, 3 * h :] = 1.0 / (1.0 + np.exp(-z[:, 3 * h :]))  # o
    i = gates[:, :h]
    f = gates[:, h : 2 * h]
    g = gates[:, 2 * h : 3 * h]
    o = gates[:, 3 * h :]
    c = f * c_prev + i * g
    hidden = o * np.tanh(c)
    return hidden, c, gates


def lstm_step_backward(dh, dc, gates, c_prev, c):
    """Backward of one cell update; returns (dz, dc_prev)."""
    h = dh.shape[-1]
    i = gates[:, :h]
    f = gates[:, h : 2 * h]
    g = gates[:, 2 * h : 3 * h]
    o = gates[:, 3 * h :]
    tc = np.tanh(c)
    dc_total = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(gates)
    dz[:, :h] = dc_total * g * i * (1.0 - i)
    dz[:, h : 2 * h] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * h : 3 * h] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * h :] = dh * tc * o * (1.0 - o)
    dc_prev = dc_total * f
    return dz, dc_prev


def rir_accumulate(h, start, amp, taps):
    """Add ``amp[k] * taps[k, :]`` into ``h`` at offset ``start[k]`` for every image.

    Entries whose tap window would run past the end of ``h`` are dropped
    by the caller; this kernel assumes in-range offsets.
    """
    n, ntaps = taps.shape
    offs = np.arange(ntaps, dtype=np.int64)
    chunk = 65536
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pos = start[lo:hi, None] + offs[None, :]
        np.add.at(h, pos.ravel(), (amp[lo:hi, None] * taps[lo:hi]).ravel())
    return h


def overlap_add(frames, hop):
    """Sum frames (..., N, W) into a signal (..., (N-1)*hop + W)."""
    *lead, n, w = frames.shape
    out = np.zeros((*lead, (n - 1) * hop + w), dtype=frames.dtype)
    for t in range(n):
        out[..., t * hop : t * hop + w] += frames[..., t, :]
    return out
