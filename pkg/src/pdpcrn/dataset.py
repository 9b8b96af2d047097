"""Dataset synthesis over the SNR x RT60 grid, manifests, and batching.

Every manifest row is generated from its own seed derived from
(global_seed, row_index), so synthesis is bitwise reproducible and rows
can be produced in any order or in parallel. Speech comes from a WAV
corpus when one is supplied and from the built-in synthesizer
otherwise; the noise source falls back to seeded pink noise.
"""

import json
import math
import os

import numpy as np

from . import sources
from .scenes import SceneConfig, mix_scene, random_scene
from .wavio import WavError, read_wav, write_wav

FS = 16000
SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0)
RT60_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class DatasetError(ValueError):
    pass


def grid_cells():
    """The 45 evaluation cells, SNR-major."""
    return [(snr, rt60) for snr in SNR_GRID for rt60 in RT60_GRID]


def row_rng(global_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(global_seed), int(index)]))


def _list_corpus(corpus_dir):
    names = sorted(n for n in os.listdir(corpus_dir) if n.lower().endswith(".wav"))
    if not names:
        raise DatasetError(f"no WAV files in corpus {corpus_dir}")
    return [os.path.join(corpus_dir, n) for n in names]


def _load_mono(path, duration: float):
    x, rate = read_wav(path)
    if rate != FS:
        raise DatasetError(f"{path}: sample rate {rate} != {FS}; resample offline")
    x = x[0]
    want = int(round(duration * FS))
    if x.size >= want:
        return x[:want]
    return np.tile(x, int(math.ceil(want / x.size)))[:want]


def synthesize_dataset(out_dir, count, seed, num_mics=16, duration=3.0,
                       corpus_dir=None, noise_dir=None, log=None):
    """Writes WAV pairs + manifest.jsonl; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    cells = grid_cells()
    corpus = _list_corpus(corpus_dir) if corpus_dir else None
    noises = _list_corpus(noise_dir) if noise_dir else None
    rows = []
    for i in range(count):
        rng = row_rng(seed, i)
        snr_db, rt60 = cells[i % len(cells)]
        if corpus:
            speech = _load_mono(corpus[i % len(corpus)], duration)
        else:
            speech = sources.synth_speech(rng, duration)
        if noises:
            noise = _load_mono(noises[i % len(noises)], duration)
        else:
            noise = sources.pink_noise(rng, speech.size)
        scene = random_scene(rng, snr_db, rt60, num_mics=num_mics)
        mix = mix_scene(speech, noise, scene)
        mix_path = os.path.join(out_dir, f"mix_{i:05d}.wav")
        tgt_path = os.path.join(out_dir, f"target_{i:05d}.wav")
        write_wav(mix_path, mix.mixture, FS, encoding="float32")
        write_wav(tgt_path, mix.target, FS, encoding="float32")
        rows.append(
            {
                "id": i,
                "mixture_path": mix_path,
                "target_path": tgt_path,
                "snr_db": snr_db,
                "rt60_s": rt60,
                "seed": int(seed),
                "scene": scene.to_dict(),
            }
        )
        if log:
            log(f"synth {i + 1}/{count}: snr {snr_db:+.0f} dB, rt60 {rt60:.1f} s")
    manifest = os.path.join(out_dir, "manifest.jsonl")
    save_manifest(manifest, rows)
    return manifest


def save_manifest(path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def load_manifest(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise DatasetError(f"{path}: empty manifest")
    return rows


def load_row(row):
    """(mixture, target) arrays shaped (M, N) for one manifest row."""
    mix, rate_m = read_wav(row["mixture_path"])
    tgt, rate_t = read_wav(row["target_path"])
    if rate_m != FS or rate_t != FS:
        raise DatasetError(f"row {row.get('id')}: unexpected sample rate")
    n = min(mix.shape[1], tgt.shape[1])
    return mix[:, :n], tgt[:, :n]


class SegmentSampler:
    """Deterministic sampler of fixed-length training segments.

    Each epoch enumerates every non-overlapping segment of every
    utterance, drops segments whose target is essentially silent at the
    reference mic, shuffles them with an epoch-specific seed, and packs
    them into batches.
    """

    def __init__(self, rows, segment_seconds: float, seed: int):
        self.rows = list(rows)
        self.seg_len = int(round(segment_seconds * FS))
        if self.seg_len % 200 != 0:
            raise DatasetError("segment length must be a whole number of hops")
        self.seed = int(seed)
        self._cache = {}
        self._index = []
        for r, row in enumerate(self.rows):
            mix, tgt = self._load(r)
            n_seg = mix.shape[1] // self.seg_len
            ref = tgt[0]
            floor = 1e-8 * max(float(np.max(ref**2)), 1e-12)
            for s in range(n_seg):
                chunk = ref[s * self.seg_len : (s + 1) * self.seg_len]
                if float(np.mean(chunk**2)) > floor:
                    self._index.append((r, s))
        if not self._index:
            raise DatasetError("no usable training segments")

    def _load(self, r):
        if r not in self._cache:
            self._cache[r] = load_row(self.rows[r])
        return self._cache[r]

    def __len__(self):
        return len(self._index)

    def batches(self, epoch: int, batch_size: int):
        order = np.random.default_rng(
            np.random.SeedSequence([self.seed, int(epoch)])
        ).permutation(len(self._index))
        for lo in range(0, len(order), batch_size):
            picks = order[lo : lo + batch_size]
            mixes, tgts = [], []
            for j in picks:
                r, s = self._index[j]
                mix, tgt = self._load(r)
                sl = slice(s * self.seg_len, (s + 1) * self.seg_len)
                mixes.append(mix[:, sl])
                tgts.append(tgt[:, sl])
            yield np.stack(mixes), np.stack(tgts)
