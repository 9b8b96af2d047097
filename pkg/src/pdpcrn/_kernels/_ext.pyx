# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; contracts documented in ``_fallback.py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] x, int kt, int kf, int st, int sf):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], t = x.shape[2], f = x.shape[3]
    cdef Py_ssize_t t_out = (t - kt) // st + 1
    cdef Py_ssize_t f_out = (f - kf) // sf + 1
    out_np = np.empty((b, t_out, f_out, c * kt * kf), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t ib, it, jf, ic, at, af, col
    with nogil:
        for ib in range(b):
            for it in range(t_out):
                for jf in range(f_out):
                    col = 0
                    for ic in range(c):
                        for at in range(kt):
                            for af in range(kf):
                                out[ib, it, jf, col] = x[ib, ic, it * st + at, jf * sf + af]
                                col += 1
    return out_np


def im2col(x, kt, kf, st, sf):
    return _im2col(np.ascontiguousarray(x), kt, kf, st, sf)


def _col2im(real[:, :, :, ::1] cols, real[:, :, :, ::1] x,
            int kt, int kf, int st, int sf):
    cdef Py_ssize_t b = cols.shape[0], t_out = cols.shape[1], f_out = cols.shape[2]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t ib, it, jf, ic, at, af, col
    with nogil:
        for ib in range(b):
            for it in range(t_out):
                for jf in range(f_out):
                    col = 0
                    for ic in range(c):
                        for at in range(kt):
                            for af in range(kf):
                                x[ib, ic, it * st + at, jf * sf + af] += cols[ib, it, jf, col]
                                col += 1


def col2im(cols, c, t_in, f_in, kt, kf, st, sf):
    cols = np.ascontiguousarray(cols)
    x = np.zeros((cols.shape[0], c, t_in, f_in), dtype=cols.dtype)
    _col2im(cols, x, kt, kf, st, sf)
    return x


def _lstm_fwd(real[:, ::1] z, real[:, ::1] c_prev,
              real[:, ::1] hid, real[:, ::1] c, real[:, ::1] gates):
    cdef Py_ssize_t b = z.shape[0], h = c_prev.shape[1]
    cdef Py_ssize_t ib, j
    cdef real gi, gf, gg, go, cc
    with nogil:
        for ib in range(b):
            for j in range(h):
                gi = <real>(1.0 / (1.0 + exp(-z[ib, j])))
                gf = <real>(1.0 / (1.0 + exp(-z[ib, h + j])))
                gg = <real>tanh(z[ib, 2 * h + j])
                go = <real>(1.0 / (1.0 + exp(-z[ib, 3 * h + j])))
                cc = gf * c_prev[ib, j] + gi * gg
                gates[ib, j] = gi
                gates[ib, h + j] = gf
                gates[ib, 2 * h + j] = gg
                gates[ib, 3 * h + j] = go
                c[ib, j] = cc
                hid[ib, j] = go * <real>tanh(cc)


def lstm_step_forward(z, c_prev):
    z = np.ascontiguousarray(z)
    c_prev = np.ascontiguousarray(c_prev)
    b, h4 = z.shape
    h = h4 // 4
    hid = np.empty((b, h), dtype=z.dtype)
    c = np.empty((b, h), dtype=z.dtype)
    gates = np.empty((b, h4), dtype=z.dtype)
    _lstm_fwd(z, c_prev, hid, c, gates)
    return hid, c, gates


def _lstm_bwd(real[:, ::1] dh, real[:, ::1] dc, real[:, ::1] gates,
              real[:, ::1] c_prev, real[:, ::1] c,
              real[:, ::1] dz, real[:, ::1] dc_prev):
    cdef Py_ssize_t b = dh.shape[0], h = dh.shape[1]
    cdef Py_ssize_t ib, j
    cdef real gi, gf, gg, go, tc, dct
    with nogil:
        for ib in range(b):
            for j in range(h):
                gi = gates[ib, j]
                gf = gates[ib, h + j]
                gg = gates[ib, 2 * h + j]
                go = gates[ib, 3 * h + j]
                tc = <real>tanh(c[ib, j])
                dct = dc[ib, j] + dh[ib, j] * go * (<real>1.0 - tc * tc)
                dz[ib, j] = dct * gg * gi * (<real>1.0 - gi)
                dz[ib, h + j] = dct * c_prev[ib, j] * gf * (<real>1.0 - gf)
                dz[ib, 2 * h + j] = dct * gi * (<real>1.0 - gg * gg)
                dz[ib, 3 * h + j] = dh[ib, j] * tc * go * (<real>1.0 - go)
                dc_prev[ib, j] = dct * gf


def lstm_step_backward(dh, dc, gates, c_prev, c):
    dh = np.ascontiguousarray(dh)
    dc = np.ascontiguousarray(dc)
    gates = np.ascontiguousarray(gates)
    c_prev = np.ascontiguousarray(c_prev)
    c = np.ascontiguousarray(c)
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(dh)
    _lstm_bwd(dh, dc, gates, c_prev, c, dz, dc_prev)
    return dz, dc_prev


def _rir_acc(double[::1] h, cnp.int64_t[::1] start, double[::1] amp,
             double[:, ::1] taps):
    cdef Py_ssize_t n = taps.shape[0], ntaps = taps.shape[1]
    cdef Py_ssize_t k, j
    cdef cnp.int64_t s
    cdef double a
    with nogil:
        for k in range(n):
            a = amp[k]
            s = start[k]
            for j in range(ntaps):
                h[s + j] += a * taps[k, j]


def rir_accumulate(h, start, amp, taps):
    start = np.ascontiguousarray(start, dtype=np.int64)
    amp = np.ascontiguousarray(amp, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    _rir_acc(h, start, amp, taps)
    return h


def _ola(real[:, :, ::1] frames, real[:, ::1] out, int hop):
    cdef Py_ssize_t nb = frames.shape[0], n = frames.shape[1], w = frames.shape[2]
    cdef Py_ssize_t ib, t, j
    with nogil:
        for ib in range(nb):
            for t in range(n):
                for j in range(w):
                    out[ib, t * hop + j] += frames[ib, t, j]


def overlap_add(frames, hop):
    frames = np.ascontiguousarray(frames)
    shape = tuple(frames.shape)
    nd = len(shape)  # wraparound is off module-wide, so no negative indices here
    n, w = shape[nd - 2], shape[nd - 1]
    f3 = frames.reshape((-1, n, w))
    out = np.zeros((f3.shape[0], (n - 1) * hop + w), dtype=frames.dtype)
    _ola(f3, out, hop)
    return out.reshape(shape[: nd - 2] + ((n - 1) * hop + w,))
