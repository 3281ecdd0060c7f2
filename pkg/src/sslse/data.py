"""Corpus handling: WAV I/O, pairing, SNR synthesis, cropping, splitting.

Corpus layout follows the VCTK-DEMAND convention: parallel ``clean/`` and
``noisy/`` directories with identical file names, plus a ``manifest.json``
mapping utterance ids to paths.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import WORK_RATE, Waveform, mix_at_snr
from .errors import FormatError, InvalidInput

CROP_SAMPLES = 20480


@dataclass(frozen=True)
class UtterancePair:
    id: str
    clean: Waveform
    noisy: Waveform

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise InvalidInput(f"pair {self.id}: clean/noisy length mismatch")
        if self.clean.sample_rate != self.noisy.sample_rate:
            raise InvalidInput(f"pair {self.id}: sample-rate mismatch")


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    val_ids: tuple
    seed: int


def read_wav(path) -> Waveform:
    try:
        rate, samples = wavfile.read(path)
    except Exception as exc:
        raise FormatError(f"cannot parse WAV file {path}: {exc}") from exc
    if samples.ndim != 1:
        raise FormatError(f"{path}: only mono WAV is supported")
    if samples.dtype == np.int16:
        samples = samples.astype(np.float64) / 32768.0
    elif samples.dtype == np.float32:
        samples = samples.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {samples.dtype} (PCM16 or float32 only)")
    return Waveform(samples, int(rate))


def write_wav(w: Waveform, path) -> None:
    # temp-then-rename so readers never observe a partial file
    tmp = str(path) + ".tmp"
    wavfile.write(tmp, w.sample_rate, w.samples.astype(np.float32))
    os.replace(tmp, path)


def crop_pair(pair: UtterancePair, crop_samples: int = CROP_SAMPLES, rng=None):
    """Random aligned crop of (noisy, clean); short pairs are tail-padded with zeros."""
    rng = rng if rng is not None else np.random.default_rng()
    clean = pair.clean.samples
    noisy = pair.noisy.samples
    if len(clean) < crop_samples:
        pad = crop_samples - len(clean)
        clean = np.pad(clean, (0, pad))
        noisy = np.pad(noisy, (0, pad))
    offset = int(rng.integers(0, len(clean) - crop_samples + 1))
    return (
        noisy[offset : offset + crop_samples],
        clean[offset : offset + crop_samples],
    )


def split(ids, val_fraction: float = 0.05, seed: int = 0) -> SplitPlan:
    ids = list(ids)
    n = len(ids)
    if n < 2:
        raise InvalidInput("need at least 2 utterances to split")
    if not 0.0 < val_fraction < 1.0:
        raise InvalidInput("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = min(max(int(round(val_fraction * n)), 1), n - 1)
    shuffled = [ids[i] for i in order]
    return SplitPlan(train_ids=tuple(shuffled[n_val:]), val_ids=tuple(shuffled[:n_val]), seed=seed)


def synth_corpus(clean_dir, noise_dir, snrs, seed: int = 0) -> list[UtterancePair]:
    """Mix each clean file with a seeded-random noise segment at a seeded-random SNR."""
    clean_paths = sorted(Path(clean_dir).glob("*.wav"))
    noise_paths = sorted(Path(noise_dir).glob("*.wav"))
    if not clean_paths or not noise_paths:
        raise InvalidInput("clean and noise directories must be non-empty")
    snrs = list(snrs)
    rng = np.random.default_rng(seed)
    noises = [read_wav(p) for p in noise_paths]
    pairs = []
    for path in clean_paths:
        clean = read_wav(path)
        noise = noises[int(rng.integers(0, len(noises)))]
        if noise.sample_rate != clean.sample_rate:
            raise FormatError(f"{path}: noise sample rate differs from clean")
        if len(noise) < len(clean):
            reps = math.ceil(len(clean) / len(noise))
            noise = Waveform(np.tile(noise.samples, reps), noise.sample_rate)
        max_off = len(noise) - len(clean)
        offset = int(rng.integers(0, max_off + 1))
        segment = Waveform(noise.samples[offset : offset + len(clean)], noise.sample_rate)
        snr = float(snrs[int(rng.integers(0, len(snrs)))])
        noisy = mix_at_snr(clean, segment, snr)
        pairs.append(UtterancePair(id=path.stem, clean=clean, noisy=noisy))
    return pairs


def save_corpus(pairs, out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    manifest = {}
    for pair in pairs:
        clean_path = out_dir / "clean" / f"{pair.id}.wav"
        noisy_path = out_dir / "noisy" / f"{pair.id}.wav"
        write_wav(pair.clean, clean_path)
        write_wav(pair.noisy, noisy_path)
        manifest[pair.id] = {"clean_path": str(clean_path), "noisy_path": str(noisy_path)}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_corpus(corpus_dir) -> list[UtterancePair]:
    corpus_dir = Path(corpus_dir)
    manifest_path = corpus_dir / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        entries = [(uid, rec["clean_path"], rec["noisy_path"]) for uid, rec in sorted(manifest.items())]
    else:
        clean_paths = sorted((corpus_dir / "clean").glob("*.wav"))
        entries = [(p.stem, str(p), str(corpus_dir / "noisy" / p.name)) for p in clean_paths]
    if not entries:
        raise InvalidInput(f"no utterances found under {corpus_dir}")
    return [UtterancePair(uid, read_wav(c), read_wav(n)) for uid, c, n in entries]


def synth_smoke_corpus(n_utts: int = 20, duration: float = 2.0, snrs=(0, 5, 10, 15), seed: int = 0) -> list[UtterancePair]:
    """Synthetic desk-scale corpus: harmonic tone complexes in white/babble-like noise."""
    rng = np.random.default_rng(seed)
    n = int(duration * WORK_RATE)
    t = np.arange(n) / WORK_RATE
    pairs = []
    for u in range(n_utts):
        f0 = float(rng.uniform(120.0, 350.0))
        sig = np.zeros(n)
        for harm in range(1, 4):
            amp = 0.5 / harm
            sig += amp * np.sin(2 * np.pi * f0 * harm * t + rng.uniform(0, 2 * np.pi))
        # slow amplitude modulation so silent-frame logic in the metrics is exercised
        env = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
        clean = Waveform(0.3 * sig * env, WORK_RATE)
        white = rng.standard_normal(n)
        if u % 2 == 0:
            noise = Waveform(white, WORK_RATE)
        else:
            # babble-like: one-pole lowpassed and amplitude modulated
            lp = np.empty(n)
            acc = 0.0
            a = 0.9
            for i in range(n):
                acc = a * acc + (1 - a) * white[i]
                lp[i] = acc
            mod = 1.0 + 0.5 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
            noise = Waveform(lp * mod, WORK_RATE)
        snr = float(snrs[int(rng.integers(0, len(snrs)))])
        pairs.append(UtterancePair(f"utt{u:03d}", clean, mix_at_snr(clean, noise, snr)))
    return pairs
