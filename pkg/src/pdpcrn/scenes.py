"""Scene geometry and multichannel mixture synthesis.

A scene is one shoebox room with a uniform circular mic array, one
speech source and one noise point source. Mixtures obey the additive
decomposition mixture = reverberant_speech + scaled_noise exactly, and
the noise gain is chosen so the speech-to-noise power ratio at mic 0,
measured over speech-active samples only, hits the requested SNR.
The per-mic training target is the direct-path (order-0) speech image.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .rir import SPEED_OF_SOUND, generate_rir

FS = 16000
VAD_FRAME = 160  # 10 ms
VAD_FLOOR_DB = -40.0


class SceneError(ValueError):
    pass


@dataclass
class SceneConfig:
    room_dims: tuple = (6.0, 5.0, 4.0)
    array_center: tuple = (3.0, 2.5, 1.5)
    array_radius: float = 0.035
    num_mics: int = 16
    source_distance: float = 1.0
    source_azimuth: float = 0.0
    rt60: float = 0.5
    snr_db: float = 0.0
    noise_position: tuple = (1.5, 3.8, 1.7)
    seed: int = 0

    def mic_positions(self) -> np.ndarray:
        cx, cy, cz = self.array_center
        ang = 2.0 * np.pi * np.arange(self.num_mics) / self.num_mics
        return np.stack(
            [
                cx + self.array_radius * np.cos(ang),
                cy + self.array_radius * np.sin(ang),
                np.full(self.num_mics, cz),
            ],
            axis=1,
        )

    def source_position(self) -> np.ndarray:
        cx, cy, cz = self.array_center
        return np.array(
            [
                cx + self.source_distance * math.cos(self.source_azimuth),
                cy + self.source_distance * math.sin(self.source_azimuth),
                cz,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "array_center": list(self.array_center),
            "array_radius": self.array_radius,
            "num_mics": self.num_mics,
            "source_distance": self.source_distance,
            "source_azimuth": self.source_azimuth,
            "rt60": self.rt60,
            "snr_db": self.snr_db,
            "noise_position": list(self.noise_position),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("room_dims", "array_center", "noise_position"):
            d[key] = tuple(d[key])
        return cls(**d)


def random_scene(rng, snr_db: float, rt60: float, num_mics: int = 16) -> SceneConfig:
    """Scene with randomized speech azimuth and noise position."""
    room = (6.0, 5.0, 4.0)
    center = (3.0, 2.5, 1.5)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    # noise point source at least 0.5 m from the array, inside the room
    while True:
        npos = rng.uniform([0.5, 0.5, 0.5], [room[0] - 0.5, room[1] - 0.5, room[2] - 0.5])
        if np.linalg.norm(npos - np.asarray(center)) >= 0.5:
            break
    return SceneConfig(
        room_dims=room,
        array_center=center,
        num_mics=num_mics,
        source_azimuth=float(azimuth),
        rt60=float(rt60),
        snr_db=float(snr_db),
        noise_position=tuple(float(v) for v in npos),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def vad_mask(x: np.ndarray, frame: int = VAD_FRAME, floor_db: float = VAD_FLOOR_DB):
    """Per-sample speech-activity mask: 10 ms frames above peak - 40 dB."""
    n = x.size - x.size % frame
    if n == 0:
        raise SceneError("signal shorter than one activity frame")
    e = np.sum(x[:n].reshape(-1, frame) ** 2, axis=1)
    peak = e.max()
    if peak <= 0.0:
        raise SceneError("silent signal: speech activity undefined")
    active = e > peak * 10.0 ** (floor_db / 10.0)
    mask = np.zeros(x.size, dtype=bool)
    mask[:n] = np.repeat(active, frame)
    return mask


def _rir_geometry(rt60: float, room_dims) -> tuple:
    """Mixing-grade RIR length and image order; tail below ~-40 dB dropped."""
    length_s = min(max(0.4 * rt60, 0.12), 0.45)
    length = int(round(length_s * FS))
    reach = SPEED_OF_SOUND * (length + 16) / FS
    # worst-case wall hits for an image within reach (diagonal direction)
    rate = math.sqrt(sum(1.0 / d**2 for d in room_dims))
    max_order = int(np.ceil(reach * rate)) + 1
    return length, max_order


@dataclass
class Mixture:
    mixture: np.ndarray  # (M, N)
    target: np.ndarray  # (M, N) direct-path speech images
    speech_image: np.ndarray  # (M, N) reverberant speech
    noise_image: np.ndarray  # (M, N) scaled reverberant noise
    noise_gain: float
    scene: SceneConfig = field(repr=False, default=None)


def measured_snr_db(speech_image: np.ndarray, noise_image: np.ndarray) -> float:
    """Post-hoc SNR at mic 0 over speech-active samples."""
    mask = vad_mask(speech_image[0])
    ps = np.sum(speech_image[0][mask] ** 2)
    pn = np.sum(noise_image[0][mask] ** 2)
    return 10.0 * math.log10(ps / pn)


def mix_scene(speech: np.ndarray, noise: np.ndarray, scene: SceneConfig) -> Mixture:
    """Spatializes speech and noise and mixes them at the requested SNR."""
    speech = np.asarray(speech, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    n = speech.size
    if n < VAD_FRAME:
        raise SceneError("speech shorter than one activity frame")
    if noise.size < n:
        noise = np.tile(noise, int(np.ceil(n / noise.size)))
    noise = noise[:n]
    mics = scene.mic_positions()
    src = scene.source_position()
    length, max_order = _rir_geometry(scene.rt60, scene.room_dims)
    h_speech = generate_rir(scene.room_dims, src, mics, scene.rt60, max_order, length)
    h_direct = generate_rir(scene.room_dims, src, mics, scene.rt60, 0, length)
    h_noise = generate_rir(
        scene.room_dims, np.asarray(scene.noise_position), mics, scene.rt60, max_order, length
    )
    speech_img = fftconvolve(speech[None, :], h_speech, axes=1)[:, :n]
    target = fftconvolve(speech[None, :], h_direct, axes=1)[:, :n]
    noise_img = fftconvolve(noise[None, :], h_noise, axes=1)[:, :n]
    mask = vad_mask(speech_img[0])
    ps = np.sum(speech_img[0][mask] ** 2)
    pn = np.sum(noise_img[0][mask] ** 2)
    if ps <= 0.0:
        raise SceneError("reverberant speech has zero power at the reference mic")
    if pn <= 0.0:
        raise SceneError("noise has zero power over the speech-active span")
    gain = math.sqrt(ps / (pn * 10.0 ** (scene.snr_db / 10.0)))
    noise_img = noise_img * gain
    peak = np.max(np.abs(speech_img + noise_img))
    if peak > 0.99:  # keep the mixture inside [-1, 1); ratios are unaffected
        scale = 0.99 / peak
        speech_img = speech_img * scale
        noise_img = noise_img * scale
        target = target * scale
    mixture = speech_img + noise_img  # summed last so the decomposition is exact
    return Mixture(mixture, target, speech_img, noise_img, gain, scene)
