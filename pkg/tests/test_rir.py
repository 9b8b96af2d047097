"""Image-method geometry, decay, and fractional-delay placement."""

import numpy as np
import pytest

from pdpcrn import rir as R

ROOM = (6.0, 5.0, 4.0)
FS = 16000


def test_eyring_beta_behaviour():
    b1 = R.eyring_beta(ROOM, 0.3)
    b2 = R.eyring_beta(ROOM, 0.8)
    assert 0.0 < b1 < b2 < 1.0  # longer decay needs more reflective walls
    with pytest.raises(R.RirError):
        R.eyring_beta(ROOM, 0.0)


def test_direct_path_delay_and_amplitude():
    src = np.array([2.0, 2.5, 1.5])
    mic = np.array([4.0, 2.5, 1.5])  # distance exactly 2 m
    h = R.generate_rir(ROOM, src, mic, rt60=0.5, max_order=0, length=400)[0]
    d = 2.0
    true_delay = d * FS / R.SPEED_OF_SOUND
    peak = int(np.argmax(np.abs(h)))
    assert abs(peak - true_delay) <= 1.0
    assert abs(R.first_arrival(h) - true_delay) <= 1.0
    # peak and energy line up with the windowed-sinc pulse at 1/(4 pi d);
    # the 100 Hz high-pass moves both by under 2%, so allow 4%
    amp = 1.0 / (4.0 * np.pi * d)
    _, taps = R.fractional_delay_taps(np.array([true_delay]))
    assert abs(np.max(np.abs(h)) / (amp * np.max(np.abs(taps))) - 1.0) < 0.04
    assert abs(np.sum(h * h) / (amp * amp * np.sum(taps * taps)) - 1.0) < 0.04


def test_arrival_ordering_matches_distances():
    src = np.array([1.0, 2.5, 1.5])
    mics = np.array([[2.0, 2.5, 1.5], [4.5, 2.5, 1.5]])
    h = R.generate_rir(ROOM, src, mics, rt60=0.4, max_order=0, length=600)
    assert R.first_arrival(h[0]) < R.first_arrival(h[1])


def test_circular_array_first_arrivals():
    from pdpcrn.scenes import SceneConfig

    scene = SceneConfig(rt60=0.5)
    mics = scene.mic_positions()
    src = scene.source_position()
    h = R.generate_rir(ROOM, src, mics, rt60=0.5, max_order=0, length=300)
    for m in range(mics.shape[0]):
        d = np.linalg.norm(src - mics[m])
        assert abs(R.first_arrival(h[m]) - d * FS / R.SPEED_OF_SOUND) <= 1.0


@pytest.mark.parametrize("rt60", [0.3, 0.5, 0.8])
def test_schroeder_decay_tracks_rt60(rt60):
    src = np.array([2.0, 2.0, 1.5])
    mic = np.array([3.5, 3.0, 1.8])
    length = int(0.6 * rt60 * FS)
    reach = R.SPEED_OF_SOUND * (length + 16) / FS
    # enough reflections to cover every image within reach
    rate = np.sqrt(sum(1.0 / l**2 for l in ROOM))
    order = int(np.ceil(reach * rate)) + 1
    h = R.generate_rir(ROOM, src, mic, rt60=rt60, max_order=order, length=length)[0]
    est = R.schroeder_t60(h, FS)
    assert abs(est - rt60) / rt60 < 0.2


def test_image_counts_by_order():
    src = np.array([2.0, 2.5, 1.5])
    pos0, hits0 = R.image_sources(ROOM, src, max_order=0)
    assert pos0.shape == (1, 3) and hits0.tolist() == [0]
    assert np.allclose(pos0[0], src)
    pos1, hits1 = R.image_sources(ROOM, src, max_order=1)
    assert pos1.shape == (7, 3)  # source + one image per wall
    assert sorted(hits1.tolist()) == [0, 1, 1, 1, 1, 1, 1]


def test_geometry_validation():
    with pytest.raises(R.RirError, match="outside room"):
        R.generate_rir(ROOM, [7.0, 1.0, 1.0], [[1.0, 1.0, 1.0]], 0.5, 0, 100)
    with pytest.raises(R.RirError, match="microphone outside"):
        R.generate_rir(ROOM, [1.0, 1.0, 1.0], [[6.5, 1.0, 1.0]], 0.5, 0, 100)


def test_fractional_delay_taps_center():
    start, taps = R.fractional_delay_taps(np.array([100.0, 100.5]))
    assert taps.shape == (2, 16)
    # integer delay: unit tap at the exact sample, zeros elsewhere
    h = np.zeros(130)
    h[start[0] : start[0] + 16] += taps[0]
    assert abs(h[100] - 1.0) < 1e-12
    assert np.max(np.abs(np.delete(h, 100))) < 1e-12
    # half-sample delay: symmetric pair around 100.5
    h2 = np.zeros(130)
    h2[start[1] : start[1] + 16] += taps[1]
    assert abs(h2[100] - h2[101]) < 1e-12
    assert h2[100] > 0.6
