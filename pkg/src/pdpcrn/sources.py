"""Seeded source material: speech-like utterances and pink noise.

No corpus ships with the package, so the synthesizer produces voiced
utterances with pitch contours, formant resonances, fricative bursts
and pauses. They are not speech, but they carry the modulation
structure the intelligibility metric and the enhancement loss need.
"""

import numpy as np
from scipy.signal import lfilter

FS = 16000

# plausible (center Hz, bandwidth Hz) formant pairs to sample vowels from
_VOWELS = [
    ((730, 90), (1090, 110), (2440, 170)),
    ((270, 60), (2290, 110), (3010, 170)),
    ((530, 70), (1840, 100), (2480, 170)),
    ((570, 80), (840, 100), (2410, 170)),
    ((440, 70), (1020, 100), (2240, 170)),
    ((300, 60), (870, 100), (2240, 170)),
]


def _formant_filter(x, formants, fs):
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / fs)
        theta = 2.0 * np.pi * freq / fs
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        x = lfilter([1.0 - r], a, x)
    return x


def _voiced_segment(rng, n, fs):
    f0 = rng.uniform(90.0, 220.0)
    contour = f0 * (1.0 + rng.uniform(-0.15, 0.15) * np.linspace(0, 1, n))
    phase = np.cumsum(2.0 * np.pi * contour / fs)
    # glottal-ish excitation: rectified narrow pulses plus breath noise
    pulses = np.maximum(np.cos(phase), 0.0) ** 8
    excitation = pulses + 0.03 * rng.standard_normal(n)
    vowel = _VOWELS[rng.integers(0, len(_VOWELS))]
    seg = _formant_filter(excitation, vowel, fs)
    env = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / (0.02 * fs))
    return seg * env


def _fricative_segment(rng, n, fs):
    x = rng.standard_normal(n)
    center = rng.uniform(2500.0, 6000.0)
    seg = _formant_filter(x, [(center, 900.0)], fs)
    env = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / (0.01 * fs))
    return 0.4 * seg * env


def synth_speech(rng, seconds: float, fs: int = FS) -> np.ndarray:
    """One speech-like utterance, peak-normalized to 0.5."""
    total = int(round(seconds * fs))
    out = np.zeros(total)
    pos = int(rng.uniform(0.0, 0.05) * fs)
    while pos < total:
        kind = rng.uniform()
        if kind < 0.72:
            n = int(rng.uniform(0.12, 0.30) * fs)
            seg = _voiced_segment(rng, n, fs)
        elif kind < 0.88:
            n = int(rng.uniform(0.06, 0.15) * fs)
            seg = _fricative_segment(rng, n, fs)
        else:
            n = int(rng.uniform(0.06, 0.20) * fs)  # pause
            seg = None
        if seg is not None:
            stop = min(pos + n, total)
            out[pos:stop] += seg[: stop - pos] * rng.uniform(0.6, 1.0)
        pos += n
    peak = np.max(np.abs(out))
    if peak == 0.0:  # all pauses achievable only for very short requests
        out[: min(total, fs // 10)] = _voiced_segment(rng, min(total, fs // 10), fs)
        peak = np.max(np.abs(out))
    return 0.5 * out / peak


def pink_noise(rng, n: int) -> np.ndarray:
    """1/f-power noise via spectral shaping, unit RMS."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / np.sqrt(np.mean(x**2))
