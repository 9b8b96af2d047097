"""Image-method room impulse responses for a rigid shoebox room.

Walls share one absorption coefficient derived from the requested decay
time by Eyring's relation; each image lands on the sample grid through a
16-tap Hann-windowed sinc so sub-sample delays survive (at array scale
the inter-mic delays are only a couple of samples). Amplitudes follow
spherical spreading 1/(4 pi d) with one reflection factor per wall hit.
A causal 100 Hz high-pass strips the coherent low-frequency build-up
that summing many positive pulses otherwise leaves in the tail.
"""

import numpy as np
from scipy.signal import butter, lfilter

from . import _kernels as K

SPEED_OF_SOUND = 343.0
SINC_TAPS = 16
HIGHPASS_HZ = 100.0


class RirError(ValueError):
    pass


def eyring_beta(room_dims, rt60: float) -> float:
    """Wall reflection coefficient giving the requested decay time.

    Eyring: rt60 = 0.161 V / (-S ln(1 - alpha)), uniform absorption.
    """
    if rt60 <= 0.0:
        raise RirError(f"rt60 must be positive, got {rt60}")
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 1.0 - np.exp(-0.161 * volume / (surface * rt60))
    if alpha >= 1.0:
        raise RirError(f"rt60 {rt60}s unachievable in this room (absorption {alpha:.3f})")
    return float(np.sqrt(1.0 - alpha))


def fractional_delay_taps(delay: np.ndarray):
    """Start indices and 16-tap windowed-sinc rows for fractional delays."""
    start = np.floor(delay).astype(np.int64) - (SINC_TAPS // 2 - 1)
    x = start[:, None] + np.arange(SINC_TAPS)[None, :] - delay[:, None]
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * x / SINC_TAPS))
    return start, np.sinc(x) * window


def image_sources(room_dims, source, max_order: int):
    """Image positions and wall-hit counts, keeping total hits <= max_order.

    max_order counts reflections summed over all six walls, so 0 leaves
    just the source itself.
    """
    n_max = (max_order + 1) // 2  # hits along one axis >= 2|n| - 1
    n = np.arange(-n_max, n_max + 1)
    p = np.array([0, 1])
    axis_pos, axis_hits = [], []
    for ax in range(3):
        pos = (1 - 2 * p[None, :]) * source[ax] + 2.0 * n[:, None] * room_dims[ax]
        hits = np.abs(n[:, None] - p[None, :]) + np.abs(n)[:, None]
        axis_pos.append(pos.ravel())
        axis_hits.append(hits.ravel())
    hx, hy, hz = axis_hits
    total = hx[:, None, None] + hy[None, :, None] + hz[None, None, :]
    keep = total <= max_order
    ii, jj, kk = np.nonzero(keep)
    pos = np.stack([axis_pos[0][ii], axis_pos[1][jj], axis_pos[2][kk]], axis=1)
    return pos, total[keep]


def generate_rir(room_dims, source, mics, rt60: float, max_order: int, length: int,
                 fs: int = 16000) -> np.ndarray:
    """RIRs (num_mics, length) from one source to each mic position.

    max_order=0 keeps only the direct path. Images whose delay falls
    past the requested length are dropped.
    """
    room_dims = np.asarray(room_dims, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    if np.any(source <= 0.0) or np.any(source >= room_dims):
        raise RirError(f"source {source.tolist()} outside room {room_dims.tolist()}")
    if np.any(mics <= 0.0) or np.any(mics >= room_dims[None, :]):
        raise RirError("microphone outside room")
    beta = eyring_beta(room_dims, rt60)
    pos, hits = image_sources(room_dims, source, max_order)
    reach = (length + SINC_TAPS) * SPEED_OF_SOUND / fs
    out = np.zeros((mics.shape[0], length), dtype=np.float64)
    for m, mic in enumerate(mics):
        dist = np.linalg.norm(pos - mic[None, :], axis=1)
        keep = dist <= reach
        d = dist[keep]
        amp = (beta ** hits[keep]) / (4.0 * np.pi * np.maximum(d, 1e-3))
        delay = d * fs / SPEED_OF_SOUND
        start, taps = fractional_delay_taps(delay)
        # clip the tap window to the buffer: pad, accumulate, then crop
        pad_lo = SINC_TAPS
        h = np.zeros(length + 2 * SINC_TAPS + 1, dtype=np.float64)
        ok = (start + pad_lo >= 0) & (start + pad_lo + SINC_TAPS <= h.size)
        K.rir_accumulate(h, start[ok] + pad_lo, amp[ok], np.ascontiguousarray(taps[ok]))
        out[m] = h[pad_lo : pad_lo + length]
    # Every reflection has positive amplitude, so as the image density grows
    # their overlap piles up coherently near DC and the tail stops decaying
    # at the energy rate. A causal high-pass removes that build-up without
    # touching the arrival structure.
    b, a = butter(2, HIGHPASS_HZ, btype="highpass", fs=fs)
    return lfilter(b, a, out, axis=-1)


def first_arrival(h: np.ndarray) -> int:
    """First sample reaching half the peak magnitude (per RIR)."""
    mag = np.abs(h)
    return int(np.argmax(mag >= 0.5 * mag.max()))


def schroeder_t60(h: np.ndarray, fs: int = 16000) -> float:
    """Decay time from backward energy integration, fit on [-5, -25] dB."""
    energy = np.cumsum(h[::-1] ** 2)[::-1]
    energy = energy / energy[0]
    db = 10.0 * np.log10(np.maximum(energy, 1e-30))
    sel = np.where((db <= -5.0) & (db >= -25.0))[0]
    if sel.size < 8:
        raise RirError("decay range too short for a Schroeder fit")
    t = sel / fs
    slope, _ = np.polyfit(t, db[sel], 1)
    if slope >= 0.0:
        raise RirError("non-decaying impulse response")
    return -60.0 / slope
