"""Analysis/synthesis identities for the 400/200 sine-window front end."""

import numpy as np
from gradcheck import check_grads, rel_err

from pdpcrn import stft as S
from pdpcrn.tensor import Tensor


def test_window_and_shapes():
    w = S.sine_window()
    assert w.shape == (400,)
    assert abs(w[0] - np.sin(np.pi * 0.5 / 400)) < 1e-15
    # 50% overlapped squared windows tile to exactly one
    assert np.allclose(w[:200] ** 2 + w[200:] ** 2, 1.0, atol=1e-12)
    x = np.zeros(16000)
    spec = S.stft(x)
    assert spec.shape == (S.num_frames(16000), 201)
    assert np.all(spec == 0.0)


def test_pure_tone_lands_on_bin_25():
    t = np.arange(16000) / 16000.0
    spec = S.stft(np.sin(2 * np.pi * 1000.0 * t))
    mags = np.abs(spec).mean(axis=0)
    assert int(np.argmax(mags)) == 25


def test_round_trip_interior():
    rng = np.random.default_rng(50)
    for _ in range(5):
        n = int(rng.integers(4, 10)) * 200 + 400
        x = rng.standard_normal(n)
        y = S.istft(S.stft(x), length=n)
        err = np.abs(y[200:-200] - x[200:-200]) / np.maximum(np.abs(x[200:-200]), 1e-12)
        assert np.max(err) < 1e-6


def test_single_frame_is_windowed_segment():
    rng = np.random.default_rng(51)
    x = rng.standard_normal(400)
    y = S.istft(S.stft(x))
    assert rel_err(y, x * S.sine_window() ** 2) < 1e-12


def test_parseval_per_frame():
    rng = np.random.default_rng(52)
    x = rng.standard_normal(1200)
    spec = S.stft(x)
    frames = np.lib.stride_tricks.sliding_window_view(x, 400)[::200] * S.sine_window()
    for t in range(spec.shape[0]):
        time_e = np.sum(frames[t] ** 2)
        mag2 = np.abs(spec[t]) ** 2
        freq_e = (mag2[0] + 2.0 * np.sum(mag2[1:-1]) + mag2[-1]) / 400.0
        assert rel_err(time_e, freq_e) < 1e-9


def test_short_signal_rejected():
    import pytest

    with pytest.raises(ValueError, match="shorter than one frame"):
        S.stft(np.zeros(399))


def test_differentiable_synthesis_matches_fast_path():
    rng = np.random.default_rng(53)
    x = rng.standard_normal(1600)
    spec = S.stft(x)
    re = Tensor(spec.real.copy())
    im = Tensor(spec.imag.copy())
    y = S.istft_op(re, im, length=1600)
    assert rel_err(y.data, S.istft(spec, length=1600)) < 1e-10


def test_differentiable_synthesis_gradients():
    rng = np.random.default_rng(54)
    # tiny geometry: gradients through both bases and the overlap-add
    re = rng.standard_normal((1, 3, 201)) * 0.1
    im = rng.standard_normal((1, 3, 201)) * 0.1
    check_grads(lambda r, i: S.istft_op(r, i)[..., ::40], [re, im], tol=1e-5)


def test_plane_stacking_round_trip():
    rng = np.random.default_rng(55)
    spec = rng.standard_normal((4, 6, 201)) + 1j * rng.standard_normal((4, 6, 201))
    planes = S.spec_to_planes(spec, np.float64)
    assert planes.shape == (8, 6, 201)
    back = S.planes_to_spec(planes)
    assert np.array_equal(back, spec)
