"""STFT front end: 25 ms sine-window frames at 16 kHz with 50% overlap.

Analysis and synthesis both apply sin(pi (k + 0.5) / 400), so the
overlapped synthesis weights sum to exactly one away from the signal
edges and the round trip is an identity there. ``istft_op`` is the
tape-differentiable synthesis path used by waveform losses; it carries
the real-DFT basis explicitly and must match the fast numpy route.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels as K
from . import tensor as tz
from .layers import overlap_add_op
from .tensor import Tensor

SAMPLE_RATE = 16000
FRAME = 400
HOP = 200
NBINS = FRAME // 2 + 1


def sine_window(n=FRAME):
    k = np.arange(n)
    return np.sin(np.pi * (k + 0.5) / n)


def num_frames(n_samples: int) -> int:
    if n_samples < FRAME:
        raise ValueError(f"signal of {n_samples} samples is shorter than one frame")
    return 1 + (n_samples - FRAME) // HOP


def stft(x: np.ndarray) -> np.ndarray:
    """(..., N) real samples -> (..., T, 201) complex spectra."""
    num_frames(x.shape[-1])  # validates the length
    frames = sliding_window_view(x, FRAME, axis=-1)[..., ::HOP, :]
    return np.fft.rfft(frames * sine_window().astype(x.dtype), axis=-1)


def istft(spec: np.ndarray, length=None) -> np.ndarray:
    """(..., T, 201) complex spectra -> (..., samples) via windowed overlap-add."""
    frames = np.fft.irfft(spec, n=FRAME, axis=-1) * sine_window()
    x = K.overlap_add(np.ascontiguousarray(frames), HOP)
    return x if length is None else x[..., :length]


def _synthesis_bases(dtype):
    """Real and imaginary synthesis matrices (201, 400), window folded in.

    Row f reconstructs the frame contribution of bin f including the
    conjugate-symmetric half, so frames = Re @ C + Im @ S.
    """
    k = np.arange(FRAME)
    f = np.arange(NBINS)[:, None]
    weight = np.full((NBINS, 1), 2.0)
    weight[0] = weight[-1] = 1.0  # DC and Nyquist appear once in the full spectrum
    ang = 2.0 * np.pi * f * k[None, :] / FRAME
    win = sine_window()[None, :]
    c = (weight / FRAME) * np.cos(ang) * win
    s = -(weight / FRAME) * np.sin(ang) * win
    return c.astype(dtype), s.astype(dtype)


def istft_op(real: Tensor, imag: Tensor, length=None) -> Tensor:
    """Differentiable synthesis from split real/imag planes (..., T, 201)."""
    c, s = _synthesis_bases(real.dtype)
    frames = real @ Tensor(c, dtype=real.dtype) + imag @ Tensor(s, dtype=imag.dtype)
    x = overlap_add_op(frames, HOP)
    if length is not None:
        x = x[..., :length]
    return x


def spec_to_planes(spec: np.ndarray, dtype) -> np.ndarray:
    """Complex (M, T, F) -> stacked real planes (2M, T, F), real block first."""
    return np.concatenate([spec.real, spec.imag], axis=0).astype(dtype)


def planes_to_spec(planes: np.ndarray) -> np.ndarray:
    """Inverse of ``spec_to_planes`` for (2M, T, F) arrays."""
    m = planes.shape[0] // 2
    return planes[:m].astype(np.float64) + 1j * planes[m:].astype(np.float64)
