"""Deterministic signal kernels: STFT/ISTFT, log1p feature, SNR mixing, resampling.

All functions are pure and operate on float64 internally. The working sample
rate for the enhancement pipeline is 16 kHz; other rates must be converted
explicitly with :func:`resample`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import i0 as bessel_i0

from . import kernels
from .errors import InvalidInput, NumericalError, ShapeError

WORK_RATE = 16000
WINDOW_LEN = 400
HOP = 160

# Resampler design: windowed sinc, Kaiser beta 8.6, 64 taps per polyphase branch.
_RESAMPLE_TAPS_PER_PHASE = 64
_RESAMPLE_HALF = _RESAMPLE_TAPS_PER_PHASE // 2
_KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise InvalidInput(f"waveform must be mono 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramPair:
    """Magnitude/phase STFT plus the log1p-compressed magnitude feature."""

    magnitude: np.ndarray
    phase: np.ndarray
    log1p_mag: np.ndarray
    frame_hop: int
    window_len: int

    @property
    def fft_bins(self) -> int:
        return self.window_len // 2 + 1

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[0]


def periodic_hann(length: int) -> np.ndarray:
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft(x: Waveform, window_len: int = WINDOW_LEN, hop: int = HOP) -> SpectrogramPair:
    """Centered STFT with reflect padding, truncated to floor(len/hop) frames."""
    if len(x) == 0:
        raise InvalidInput("empty signal")
    if window_len % 2 != 0:
        raise InvalidInput("window_len must be even")
    if hop > window_len or hop <= 0:
        raise InvalidInput("hop must satisfy 0 < hop <= window_len")

    samples = x.samples
    half = window_len // 2
    pad_mode = "reflect" if len(samples) > 1 else "edge"
    padded = np.pad(samples, half, mode=pad_mode)

    n_frames = len(samples) // hop
    if n_frames == 0:
        raise InvalidInput(f"signal shorter than one hop ({hop} samples)")
    window = periodic_hann(window_len)
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_len)[::hop][:n_frames]
    spec = np.fft.rfft(frames * window, n=window_len, axis=1)
    magnitude = np.abs(spec)
    return SpectrogramPair(
        magnitude=magnitude,
        phase=np.angle(spec),
        log1p_mag=np.log1p(magnitude),
        frame_hop=hop,
        window_len=window_len,
    )


def istft(
    mag: np.ndarray,
    phase: np.ndarray,
    window_len: int = WINDOW_LEN,
    hop: int = HOP,
    out_len: int | None = None,
) -> np.ndarray:
    """Inverse STFT by windowed overlap-add with window-sum normalization."""
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise ShapeError(f"magnitude {mag.shape} vs phase {phase.shape}")
    n_frames = mag.shape[0]
    if out_len is None:
        out_len = n_frames * hop

    window = periodic_hann(window_len)
    spec = mag * np.exp(1j * phase)
    frames = np.fft.irfft(spec, n=window_len, axis=1) * window

    half = window_len // 2
    padded_len = out_len + window_len
    acc = kernels.overlap_add(np.ascontiguousarray(frames), hop, padded_len)
    win_sq = np.tile(window * window, (n_frames, 1))
    win_sum = kernels.overlap_add(np.ascontiguousarray(win_sq), hop, padded_len)

    region = slice(half, half + out_len)
    acc = acc[region]
    win_sum = win_sum[region]
    # Positions past the last frame's reach are legitimately uncovered -> zero;
    # a vanishing window-sum inside the covered span would divide to Inf.
    coverage = (n_frames - 1) * hop + window_len
    covered = np.arange(half, half + out_len) < coverage
    bad = covered & (win_sum < 1e-8)
    if np.any(bad):
        raise NumericalError("window-sum below 1e-8 at interior sample")
    out = np.zeros(out_len)
    out[covered] = acc[covered] / win_sum[covered]
    return out


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Return clean + g*noise with the noise gain set to hit snr_db exactly."""
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInput("sample-rate mismatch between clean and noise")
    if len(noise) < len(clean):
        raise InvalidInput("noise must be at least as long as clean")
    noise_crop = noise.samples[: len(clean)]
    p_clean = np.mean(clean.samples**2)
    p_noise = np.mean(noise_crop**2)
    if p_clean <= 0.0 or p_noise <= 0.0:
        raise InvalidInput("silent clean or noise signal")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * noise_crop, clean.sample_rate)


def measured_snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """SNR of estimate against reference in dB (power-ratio definition)."""
    err = np.asarray(reference) - np.asarray(estimate)
    p_ref = np.sum(np.asarray(reference) ** 2)
    p_err = np.sum(err**2)
    if p_err == 0.0:
        return math.inf
    return 10.0 * math.log10(p_ref / p_err)


def _design_polyphase(up: int, down: int) -> np.ndarray:
    """Windowed-sinc taps, shape (up, taps_per_phase), each phase DC-normalized."""
    half = _RESAMPLE_HALF
    fc = min(1.0, up / down)  # cutoff relative to the input Nyquist
    phases = np.arange(up, dtype=np.float64)[:, None] / up
    i = np.arange(_RESAMPLE_TAPS_PER_PHASE, dtype=np.float64)[None, :]
    tau = phases + (half - 1) - i  # offset of each tap from the output instant
    kernel = fc * np.sinc(fc * tau)
    arg = 1.0 - (tau / half) ** 2
    kaiser = np.where(arg > 0.0, bessel_i0(_KAISER_BETA * np.sqrt(np.maximum(arg, 0.0))), 0.0)
    kaiser /= bessel_i0(_KAISER_BETA)
    taps = kernel * kaiser
    taps /= taps.sum(axis=1, keepdims=True)
    return taps


def resample(x: Waveform, target_rate: int) -> Waveform:
    """Rational-rate windowed-sinc polyphase resampling."""
    if target_rate <= 0:
        raise InvalidInput("target_rate must be positive")
    if len(x) == 0:
        raise InvalidInput("empty signal")
    if target_rate == x.sample_rate:
        return Waveform(x.samples.copy(), x.sample_rate)

    g = math.gcd(target_rate, x.sample_rate)
    up = target_rate // g
    down = x.sample_rate // g
    taps = _design_polyphase(up, down)
    n_out = int(round(len(x) * up / down))

    half = _RESAMPLE_HALF
    padded = np.pad(x.samples, (half - 1, half + 1))
    out = kernels.polyphase_resample(
        np.ascontiguousarray(padded), np.ascontiguousarray(taps), up, down, n_out
    )
    return Waveform(out, target_rate)
