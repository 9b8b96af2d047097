"""RIFF reader/writer round trips and malformed-file handling."""

import struct

import numpy as np
import pytest

from pdpcrn.wavio import WavError, read_wav, write_wav


def test_float32_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(60)
    x = (rng.standard_normal((3, 500)) * 0.3).astype(np.float32).astype(np.float64)
    p = tmp_path / "f32.wav"
    write_wav(p, x, 16000, encoding="float32")
    y, rate = read_wav(p)
    assert rate == 16000
    assert y.shape == (3, 500)
    assert np.array_equal(y, x)


def test_pcm16_round_trip_on_grid(tmp_path):
    # full-scale square wave sits exactly on the 16-bit grid
    x = np.where(np.arange(400) % 2 == 0, 32767 / 32768.0, -1.0)
    p = tmp_path / "sq.wav"
    write_wav(p, x, 16000, encoding="pcm16")
    y, _ = read_wav(p)
    assert np.array_equal(y[0], x)


def test_pcm16_quantization_error_bound(tmp_path):
    rng = np.random.default_rng(61)
    x = rng.uniform(-0.9, 0.9, size=(2, 333))
    p = tmp_path / "q.wav"
    write_wav(p, x, 16000)
    y, _ = read_wav(p)
    assert np.max(np.abs(y - x)) <= 0.5 / 32768.0 + 1e-12


def test_mono_vector_accepted(tmp_path):
    p = tmp_path / "mono.wav"
    write_wav(p, np.zeros(100), 8000)
    y, rate = read_wav(p)
    assert y.shape == (1, 100) and rate == 8000


def test_truncated_header_rejected(tmp_path):
    p = tmp_path / "trunc.wav"
    p.write_bytes(b"RIFF\x04\x00")
    with pytest.raises(WavError, match="truncated RIFF header"):
        read_wav(p)


def test_wrong_magic_rejected(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"FORM" + b"\x00" * 20)
    with pytest.raises(WavError, match="not a RIFF/WAVE"):
        read_wav(p)


def test_missing_data_chunk_rejected(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    p = tmp_path / "nodata.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
    with pytest.raises(WavError, match="missing fmt or data"):
        read_wav(p)


def test_unsupported_encoding_rejected(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 16000, 1, 8)  # 8-bit PCM
    body = (
        b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", 4) + b"\x00" * 4
    )
    p = tmp_path / "u8.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
    with pytest.raises(WavError, match="unsupported encoding"):
        read_wav(p)


def test_unknown_chunks_skipped_with_word_alignment(tmp_path):
    data = (np.arange(5) * 1000).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    junk = b"\xab" * 3  # odd-sized chunk exercises the pad byte
    body = (
        b"junk" + struct.pack("<I", len(junk)) + junk + b"\x00"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(data)) + data
    )
    p = tmp_path / "chunks.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
    y, rate = read_wav(p)
    assert rate == 16000
    assert np.array_equal(y[0], np.arange(5) * 1000 / 32768.0)
