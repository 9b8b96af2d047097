"""Objective evaluation: STOI, SI-SDR, and grid reports.

STOI follows the standard recipe: resample to 10 kHz, drop frames more
than 40 dB below the loudest one, analyze 256-sample Hann frames with
512-point FFTs, collect 15 one-third-octave bands starting at 150 Hz,
and correlate 30-frame (384 ms) band-envelope segments after clipping
the degraded envelope at a -15 dB SDR bound. The average correlation is
the score, so identical signals score exactly 1.0. The 16 -> 10 kHz
resampler is polyphase with a pinned kernel: zero-stuff by 5, filter
with h[n] = (5/8) sinc((n-64)/8) under a 129-point Hann taper, keep
every 8th sample starting at the 64-sample group delay.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from . import stft as stft_mod
from .dataset import load_row
from .wavio import WavError

FS_IN = 16000
FS_STOI = 10000
FRAME = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
BAND_LO_HZ = 150.0
SEG = 30
DYN_RANGE_DB = 40.0
CLIP_FACTOR = 1.0 + 10.0 ** (-15.0 / 20.0)  # -15 dB SDR bound
SDR_CLAMP_DB = 60.0


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SI-SDR


def si_sdr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SDR in dB, clamped to +-60."""
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    estimate = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if reference.shape != estimate.shape:
        raise MetricError("reference and estimate lengths differ")
    ref_pow = float(np.dot(reference, reference))
    if ref_pow == 0.0:
        raise MetricError("zero-power reference")
    s_target = (np.dot(estimate, reference) / ref_pow) * reference
    err = estimate - s_target
    num = float(np.dot(s_target, s_target)) + 1e-12
    den = float(np.dot(err, err)) + 1e-12
    return float(np.clip(10.0 * np.log10(num / den), -SDR_CLAMP_DB, SDR_CLAMP_DB))


# ---------------------------------------------------------------------------
# STOI


def _hann(n: int) -> np.ndarray:
    # Hann taper without its zero endpoints
    return np.hanning(n + 2)[1:-1]


def resample_16k_to_10k(x: np.ndarray) -> np.ndarray:
    n = np.arange(129) - 64
    h = (5.0 / 8.0) * np.sinc(n / 8.0) * np.hanning(129)
    up = np.zeros(5 * x.size)
    up[::5] = x
    return fftconvolve(up, h)[64::8][: (5 * x.size) // 8]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drops frames where the CLEAN signal is 40 dB below its loudest frame;
    both signals are rebuilt from the kept frames by windowed overlap-add."""
    w = _hann(FRAME)
    if x.size < FRAME:
        raise MetricError("signal shorter than one analysis frame")
    fx = sliding_window_view(x, FRAME)[::HOP] * w
    fy = sliding_window_view(y, FRAME)[::HOP] * w
    level = 20.0 * np.log10(np.linalg.norm(fx, axis=-1) + np.finfo(np.float64).eps)
    keep = level > level.max() - DYN_RANGE_DB
    if level.max() == 20.0 * np.log10(np.finfo(np.float64).eps) or not keep.any():
        raise MetricError("all-silent clean signal")
    fx, fy = fx[keep], fy[keep]
    out_len = (fx.shape[0] - 1) * HOP + FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(fx.shape[0]):
        xs[i * HOP : i * HOP + FRAME] += fx[i]
        ys[i * HOP : i * HOP + FRAME] += fy[i]
    return xs, ys


def _band_matrix() -> np.ndarray:
    freqs = np.arange(NFFT // 2 + 1) * (FS_STOI / NFFT)
    centers = BAND_LO_HZ * 2.0 ** (np.arange(NUM_BANDS) / 3.0)
    obm = np.zeros((NUM_BANDS, freqs.size))
    for k, cf in enumerate(centers):
        lo = int(np.argmin(np.abs(freqs - cf * 2.0 ** (-1.0 / 6.0))))
        hi = int(np.argmin(np.abs(freqs - cf * 2.0 ** (1.0 / 6.0))))
        obm[k, lo:hi] = 1.0
    return obm


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    frames = sliding_window_view(x, FRAME)[::HOP] * _hann(FRAME)
    spec = np.fft.rfft(frames, n=NFFT, axis=-1)
    return np.sqrt(_band_matrix() @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(clean: np.ndarray, degraded: np.ndarray) -> float:
    """Short-time envelope-correlation intelligibility in [-1, 1]."""
    clean = np.asarray(clean, dtype=np.float64).reshape(-1)
    degraded = np.asarray(degraded, dtype=np.float64).reshape(-1)
    if clean.shape != degraded.shape:
        raise MetricError("clean and degraded lengths differ")
    x = resample_16k_to_10k(clean)
    y = resample_16k_to_10k(degraded)
    x, y = _remove_silent_frames(x, y)
    ex = _band_envelopes(x)
    ey = _band_envelopes(y)
    if ex.shape[1] < SEG:
        raise MetricError("too few active frames for a 384 ms analysis window")
    xs = sliding_window_view(ex, SEG, axis=1)  # (bands, segments, SEG)
    ys = sliding_window_view(ey, SEG, axis=1)

    ypow = np.sum(ys * ys, axis=-1, keepdims=True)
    alpha = np.sqrt(
        np.divide(np.sum(xs * xs, axis=-1, keepdims=True), ypow,
                  out=np.zeros_like(ypow), where=ypow > 0)
    )
    yc = np.minimum(alpha * ys, CLIP_FACTOR * xs)

    dx = xs - np.mean(xs, axis=-1, keepdims=True)
    dy = yc - np.mean(yc, axis=-1, keepdims=True)
    num = np.sum(dx * dy, axis=-1)
    a = np.sum(dx * dx, axis=-1)
    b = np.sum(dy * dy, axis=-1)
    den = np.sqrt(a * b)
    d = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    # two flat envelopes track each other perfectly; one flat, one not, do not
    d[(a == 0) & (b == 0)] = 1.0
    return float(np.mean(d))


# ---------------------------------------------------------------------------
# grid evaluation


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)


def _aggregate(rows) -> dict:
    def _means(group):
        return {
            "stoi_pct": float(np.mean([r["stoi_pct"] for r in group])),
            "si_sdr_db": float(np.mean([r["si_sdr_db"] for r in group])),
            "count": len(group),
        }

    by_snr = {}
    for snr in sorted({r["snr_db"] for r in rows}):
        by_snr[f"{snr:g}"] = _means([r for r in rows if r["snr_db"] == snr])
    cells = []
    for snr, rt60 in sorted({(r["snr_db"], r["rt60_s"]) for r in rows}):
        group = [r for r in rows if r["snr_db"] == snr and r["rt60_s"] == rt60]
        cells.append(dict(snr_db=snr, rt60_s=rt60, **_means(group)))
    return {"overall": _means(rows), "by_snr": by_snr, "cells": cells}


def model_fn(model):
    """Wraps a spectral model as a plain (2M, T, F) -> (2M, T, F) function."""
    from . import tensor as tz
    from .tensor import Tensor

    model.eval()  # batch-norm must use its running stats, not batch stats
    dtype = model.parameters()[0].dtype

    def fn(planes: np.ndarray) -> np.ndarray:
        with tz.no_tape():
            out = model(Tensor(planes[None].astype(dtype), dtype=dtype))
        return out.data[0].astype(np.float64)

    return fn


def evaluate(fn, rows, csv_path=None, json_path=None, log=None) -> MetricReport:
    """Scores fn on manifest rows; metrics are averaged over channels.

    Rows with unreadable audio are reported and skipped. fn maps stacked
    real/imag planes (2M, T, F) to planes of the same shape.
    """
    report = MetricReport()
    for row in rows:
        try:
            mix, tgt = load_row(row)
        except (OSError, WavError, ValueError) as e:
            report.errors.append(f"row {row.get('id')}: {e}")
            if log:
                log(f"skipping row {row.get('id')}: {e}")
            continue
        spec = stft_mod.stft(mix)
        planes = np.concatenate([spec.real, spec.imag], axis=0)
        out = fn(planes)
        m = out.shape[0] // 2
        wave = stft_mod.istft(out[:m] + 1j * out[m:])
        n = min(wave.shape[-1], tgt.shape[-1])
        stois = [stoi(tgt[c, :n], wave[c, :n]) for c in range(m)]
        sdrs = [si_sdr_db(tgt[c, :n], wave[c, :n]) for c in range(m)]
        report.rows.append(
            {
                "id": row["id"],
                "snr_db": float(row["snr_db"]),
                "rt60_s": float(row["rt60_s"]),
                "stoi_pct": 100.0 * float(np.mean(stois)),
                "si_sdr_db": float(np.mean(sdrs)),
            }
        )
        if log:
            r = report.rows[-1]
            log(f"row {r['id']}: stoi {r['stoi_pct']:.2f}% si-sdr {r['si_sdr_db']:.2f} dB")
    if not report.rows:
        raise MetricError("no evaluable rows")
    report.aggregate = _aggregate(report.rows)
    if csv_path:
        with open(csv_path, "w") as f:
            f.write("id,snr_db,rt60_s,stoi_pct,si_sdr_db\n")
            for r in report.rows:
                f.write(f"{r['id']},{r['snr_db']!r},{r['rt60_s']!r},"
                        f"{r['stoi_pct']!r},{r['si_sdr_db']!r}\n")
    if json_path:
        with open(json_path, "w") as f:
            json.dump(report.aggregate, f, indent=2, sort_keys=True)
            f.write("\n")
    return report


def table(report: MetricReport) -> str:
    """Markdown summary: one row per metric, one column per SNR."""
    snrs = list(report.aggregate["by_snr"])
    head = "| metric | " + " | ".join(f"{s} dB" for s in snrs) + " | overall |"
    sep = "|---" * (len(snrs) + 2) + "|"
    lines = [head, sep]
    for metric in ("stoi_pct", "si_sdr_db"):
        cells = [f"{report.aggregate['by_snr'][s][metric]:.2f}" for s in snrs]
        overall = f"{report.aggregate['overall'][metric]:.2f}"
        lines.append(f"| {metric} | " + " | ".join(cells) + f" | {overall} |")
    return "\n".join(lines)
