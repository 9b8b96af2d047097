"""RIFF/WAVE reading and writing.

Supports 16-bit PCM and 32-bit IEEE float, mono or multichannel.
Arrays are float64 in [-1, 1), laid out (channels, samples); unknown
chunks are skipped, malformed files raise ``WavError``.
"""

import struct

import numpy as np

PCM = 1
IEEE_FLOAT = 3
EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    pass


def read_wav(path):
    """Returns (data, sample_rate) with data shaped (channels, samples)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise WavError(f"{path}: truncated RIFF header ({len(blob)} bytes)")
    if blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word aligned
    if fmt is None or data is None:
        raise WavError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise WavError(f"{path}: fmt chunk too short ({len(fmt)} bytes)")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format == EXTENSIBLE:
        if len(fmt) < 26:
            raise WavError(f"{path}: extensible fmt chunk too short")
        (audio_format,) = struct.unpack_from("<H", fmt, 24)
    if channels < 1:
        raise WavError(f"{path}: channel count {channels}")
    if audio_format == PCM and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        scale = 1.0 / 32768.0
    elif audio_format == IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data, dtype="<f4")
        scale = 1.0
    else:
        raise WavError(f"{path}: unsupported encoding (format {audio_format}, {bits} bits)")
    frames = raw.size // channels
    x = raw[: frames * channels].astype(np.float64).reshape(frames, channels).T
    return np.ascontiguousarray(x * scale), rate


def write_wav(path, data, rate, encoding="pcm16"):
    """Writes (channels, samples) or (samples,) float data in [-1, 1)."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise WavError(f"expected 1-D or 2-D data, got shape {x.shape}")
    channels, n = x.shape
    interleaved = np.ascontiguousarray(x.T)
    if encoding == "pcm16":
        fmt_code, bits = PCM, 16
        q = np.clip(np.rint(interleaved * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
    elif encoding == "float32":
        fmt_code, bits = IEEE_FLOAT, 32
        payload = interleaved.astype("<f4").tobytes()
    else:
        raise WavError(f"unknown encoding {encoding!r}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block, block, bits)
    chunks = [(b"fmt ", fmt)]
    if fmt_code != PCM:
        chunks.append((b"fact", struct.pack("<I", n)))
    chunks.append((b"data", payload))
    body = b"".join(
        cid + struct.pack("<I", len(c)) + c + (b"\x00" if len(c) & 1 else b"")
        for cid, c in chunks
    )
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
