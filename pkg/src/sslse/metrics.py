"""Objective evaluation battery: STOI, segmental SNR, LLR, WSS, Hu-Loizou
composites, and an external PESQ adapter.

STOI constants follow Taal et al. (2011); the composite regression
coefficients follow Hu & Loizou (2008). Both are frozen here in single
tables. PESQ itself is never computed natively; a configured external
command supplies it, and the composites degrade gracefully without it.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .dsp import Waveform, resample
from .errors import AdapterError, InvalidInput, PesqUnavailable

# ---------------------------------------------------------------------------
# STOI constants (Taal, Hendriks, Heusdens, Jensen 2011)
# ---------------------------------------------------------------------------
_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NBANDS = 15
_STOI_MINFREQ = 150.0
_STOI_N = 30  # frames per intermediate-intelligibility segment
_STOI_BETA = -15.0  # lower SDR clipping bound, dB
_STOI_DYN_RANGE = 40.0  # silent-frame removal dynamic range, dB

_SEG_FRAME_MS = 32.0
_SEG_SNR_MIN = -10.0
_SEG_SNR_MAX = 35.0

_FRAME_MS = 30.0  # LLR / WSS analysis frame
_RETAIN_FRACTION = 0.75
_LPC_ORDER = 16

# WSS critical band geometry and Klatt weighting constants
_WSS_CENT_FREQ = np.array([
    50.0, 120, 190, 260, 330, 400, 470, 540, 617.372, 703.378, 798.717,
    904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70, 1794.16, 1993.93,
    2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63,
])
_WSS_BANDWIDTH = np.array([
    70.0, 70, 70, 70, 70, 70, 70, 77.3724, 86.0056, 95.3398, 105.411,
    116.256, 127.914, 140.423, 153.823, 168.154, 183.457, 199.776, 217.153,
    235.631, 255.255, 276.072, 298.126, 321.465, 346.136,
])
_WSS_KMAX = 20.0
_WSS_KLOCMAX = 1.0


def _check_pair(clean: Waveform, degraded: Waveform) -> None:
    if clean.sample_rate != degraded.sample_rate:
        raise InvalidInput("sample-rate mismatch")
    if len(clean) != len(degraded):
        raise InvalidInput(f"length mismatch: {len(clean)} vs {len(degraded)}")


def _frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(x) - frame_len) // hop if len(x) >= frame_len else 0
    if n_frames <= 0:
        return np.empty((0, frame_len))
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[:: hop][:n_frames]


def _hann_sym(length: int) -> np.ndarray:
    # symmetric Hann without the zero endpoints (MATLAB hanning convention)
    n = np.arange(1, length + 1)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (length + 1)))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0, _STOI_FS, _STOI_NFFT + 1)[: _STOI_NFFT // 2 + 1]
    k = np.arange(_STOI_NBANDS, dtype=np.float64)
    freq_low = _STOI_MINFREQ * 2.0 ** ((2 * k - 1) / 6.0)
    freq_high = _STOI_MINFREQ * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((_STOI_NBANDS, len(f)))
    for i in range(_STOI_NBANDS):
        lo = int(np.argmin(np.square(f - freq_low[i])))
        hi = int(np.argmin(np.square(f - freq_high[i])))
        obm[i, lo:hi] = 1.0
    return obm


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    window = _hann_sym(_STOI_FRAME)
    x_frames = _frame_signal(x, _STOI_FRAME, _STOI_HOP) * window
    y_frames = _frame_signal(y, _STOI_FRAME, _STOI_HOP) * window
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + 1e-300)
    mask = energies > energies.max() - _STOI_DYN_RANGE
    return x_frames[mask], y_frames[mask]


def _band_envelopes(frames: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(frames, n=_STOI_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ obm.T)  # (frames, bands)


def stoi(clean: Waveform, degraded: Waveform) -> float:
    """Short-time objective intelligibility of degraded speech against clean."""
    _check_pair(clean, degraded)
    x = resample(clean, _STOI_FS).samples
    y = resample(degraded, _STOI_FS).samples
    if np.max(np.abs(x)) == 0.0:
        raise InvalidInput("clean signal is silent")

    x_frames, y_frames = _remove_silent_frames(x, y)
    if x_frames.shape[0] < _STOI_N:
        raise InvalidInput(
            f"need at least {_STOI_N} speech-active frames, got {x_frames.shape[0]}"
        )
    obm = _third_octave_matrix()
    X = _band_envelopes(x_frames, obm)
    Y = _band_envelopes(y_frames, obm)

    clip_gain = 10.0 ** (-_STOI_BETA / 20.0)
    correlations = []
    for m in range(_STOI_N, X.shape[0] + 1):
        x_seg = X[m - _STOI_N : m].T  # (bands, N)
        y_seg = Y[m - _STOI_N : m].T
        alpha = np.linalg.norm(x_seg, axis=1, keepdims=True) / (
            np.linalg.norm(y_seg, axis=1, keepdims=True) + 1e-300
        )
        y_prime = np.minimum(y_seg * alpha, x_seg * (1.0 + clip_gain))
        xc = x_seg - x_seg.mean(axis=1, keepdims=True)
        yc = y_prime - y_prime.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + 1e-300
        correlations.append(np.sum(xc * yc, axis=1) / denom)
    return float(np.mean(correlations))


# ---------------------------------------------------------------------------
# segmental SNR
# ---------------------------------------------------------------------------

def segmental_snr(clean: Waveform, degraded: Waveform) -> float:
    """Mean per-frame SNR over 32 ms frames, clamped to [-10, 35] dB."""
    _check_pair(clean, degraded)
    frame_len = int(round(_SEG_FRAME_MS * clean.sample_rate / 1000.0))
    c = _frame_signal(clean.samples, frame_len, frame_len)
    d = _frame_signal(degraded.samples, frame_len, frame_len)
    if c.shape[0] == 0:
        raise InvalidInput("signal shorter than one analysis frame")
    sig = np.sum(c * c, axis=1)
    active = sig > sig.max() * 1e-8
    if not np.any(active):
        raise InvalidInput("all frames silent")
    err = np.sum((c - d) ** 2, axis=1)
    snr = 10.0 * np.log10(sig[active] / (err[active] + 1e-300))
    return float(np.mean(np.clip(snr, _SEG_SNR_MIN, _SEG_SNR_MAX)))


# ---------------------------------------------------------------------------
# LLR / WSS
# ---------------------------------------------------------------------------

def _lpc(frame: np.ndarray, order: int):
    """Levinson-Durbin; returns (autocorrelation lags, LPC polynomial [1, -a...])."""
    n = len(frame)
    lags = np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])
    if lags[0] <= 0.0:
        return lags, None
    a = np.zeros(order)
    energy = lags[0]
    for i in range(order):
        acc = np.dot(a[:i], lags[i:0:-1]) if i else 0.0
        if energy == 0.0:
            return lags, None
        k = (lags[i + 1] - acc) / energy
        a_prev = a[:i].copy()
        a[i] = k
        if i:
            a[:i] = a_prev - k * a_prev[::-1]
        energy *= 1.0 - k * k
    return lags, np.concatenate(([1.0], -a))


def _framewise(clean: Waveform, degraded: Waveform):
    frame_len = int(round(_FRAME_MS * clean.sample_rate / 1000.0))
    hop = frame_len // 4
    window = _hann_sym(frame_len)
    c = _frame_signal(clean.samples, frame_len, hop) * window
    d = _frame_signal(degraded.samples, frame_len, hop) * window
    if c.shape[0] == 0:
        raise InvalidInput("signal shorter than one analysis frame")
    return c, d


def llr(clean: Waveform, degraded: Waveform, return_skipped: bool = False):
    """Log-likelihood ratio (LPC order 16), mean over the lowest 75% of frames."""
    _check_pair(clean, degraded)
    c_frames, d_frames = _framewise(clean, degraded)
    values = []
    skipped = 0
    for cf, df in zip(c_frames, d_frames):
        lags_c, a_clean = _lpc(cf, _LPC_ORDER)
        _, a_deg = _lpc(df, _LPC_ORDER)
        if a_clean is None or a_deg is None:
            skipped += 1
            continue
        r_c = toeplitz(lags_c)
        num = a_deg @ r_c @ a_deg
        den = a_clean @ r_c @ a_clean
        if den <= 0.0 or num <= 0.0:
            skipped += 1
            continue
        values.append(math.log(num / den))
    if not values:
        raise InvalidInput("no stable LPC frames")
    values.sort()
    keep = int(round(len(values) * _RETAIN_FRACTION))
    result = float(np.mean(values[: max(keep, 1)]))
    return (result, skipped) if return_skipped else result


def wss(clean: Waveform, degraded: Waveform) -> float:
    """Weighted spectral slope distance (25 critical bands, Klatt weighting)."""
    _check_pair(clean, degraded)
    c_frames, d_frames = _framewise(clean, degraded)
    frame_len = c_frames.shape[1]
    n_fft = int(2 ** math.ceil(math.log2(2 * frame_len)))
    n_half = n_fft // 2
    max_freq = clean.sample_rate / 2.0
    num_crit = len(_WSS_CENT_FREQ)

    # Gaussian critical-band filters, floored at the -30 dB point
    min_factor = math.exp(-30.0 / (2 * 2.303))
    j = np.arange(n_half)
    crit_filter = np.zeros((num_crit, n_half))
    for i in range(num_crit):
        f0 = math.floor((_WSS_CENT_FREQ[i] / max_freq) * n_half)
        bw = (_WSS_BANDWIDTH[i] / max_freq) * n_half
        norm = math.log(_WSS_BANDWIDTH[0]) - math.log(_WSS_BANDWIDTH[i])
        filt = np.exp(-11.0 * ((j - f0) / bw) ** 2 + norm)
        crit_filter[i] = filt * (filt > min_factor)

    def band_energies(frames):
        spec = np.abs(np.fft.fft(frames, n_fft, axis=1)) ** 2
        energy = spec[:, :n_half] @ crit_filter.T
        return 10.0 * np.log10(np.maximum(energy, 1e-10))

    def local_peaks(energy, slope):
        peaks = np.empty(num_crit - 1)
        for i in range(num_crit - 1):
            n = i
            if slope[i] > 0:
                while n < num_crit - 1 and slope[n] > 0:
                    n += 1
                peaks[i] = energy[n - 1]
            else:
                while n >= 0 and slope[n] <= 0:
                    n -= 1
                peaks[i] = energy[n + 1]
        return peaks

    ce = band_energies(c_frames)
    de = band_energies(d_frames)
    distortions = []
    for c_row, d_row in zip(ce, de):
        c_slope = np.diff(c_row)
        d_slope = np.diff(d_row)
        w_clean = (_WSS_KMAX / (_WSS_KMAX + c_row.max() - c_row[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + local_peaks(c_row, c_slope) - c_row[:-1])
        )
        w_deg = (_WSS_KMAX / (_WSS_KMAX + d_row.max() - d_row[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + local_peaks(d_row, d_slope) - d_row[:-1])
        )
        weights = 0.5 * (w_clean + w_deg)
        distortions.append(np.sum(weights * (c_slope - d_slope) ** 2) / np.sum(weights))
    distortions.sort()
    keep = int(round(len(distortions) * _RETAIN_FRACTION))
    return float(np.mean(distortions[: max(keep, 1)]))


# ---------------------------------------------------------------------------
# composites and PESQ adapter
# ---------------------------------------------------------------------------

def composite_scores(pesq: float, llr_value: float, wss_value: float, segsnr: float):
    """Hu-Loizou CSIG/CBAK/COVL regressions, clamped to the MOS range [1, 5]."""
    def clamp(v):
        return min(max(v, 1.0), 5.0)

    csig = clamp(3.093 - 1.029 * llr_value + 0.603 * pesq - 0.009 * wss_value)
    cbak = clamp(1.634 + 0.478 * pesq - 0.007 * wss_value + 0.063 * segsnr)
    covl = clamp(1.594 + 0.805 * pesq - 0.512 * llr_value - 0.007 * wss_value)
    return csig, cbak, covl


class PesqAdapter:
    """Runs a configured external PESQ command and caches by file-content hash."""

    def __init__(self, command: str, pattern: str = r"[-+]?\d+(?:\.\d+)?"):
        if not command:
            raise PesqUnavailable("no PESQ command configured")
        self.command = command
        self.pattern = re.compile(pattern)
        self._cache: dict[str, float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _key(self, clean_path, degraded_path) -> str:
        digest = hashlib.sha256()
        for path in (clean_path, degraded_path):
            with open(path, "rb") as fh:
                digest.update(fh.read())
        return digest.hexdigest()

    def score(self, clean_path, degraded_path) -> float:
        key = self._key(clean_path, degraded_path)
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
        argv = [
            arg.replace("{clean}", str(clean_path)).replace("{degraded}", str(degraded_path))
            for arg in shlex.split(self.command)
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise AdapterError(f"PESQ command failed (exit {proc.returncode}): {proc.stderr.strip()}")
        match = self.pattern.search(proc.stdout)
        if not match:
            raise AdapterError(f"could not parse PESQ value from output: {proc.stdout!r}")
        value = float(match.group(0))
        with self._lock:
            self._cache[key] = value
            self.misses += 1
        return value


def pesq_external(clean_path, degraded_path, adapter: PesqAdapter | None) -> float:
    if adapter is None:
        raise PesqUnavailable("no PESQ adapter configured")
    return adapter.score(clean_path, degraded_path)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

_FIELDS = ("stoi", "segsnr", "llr", "wss", "pesq", "csig", "cbak", "covl")


@dataclass
class ScoreReport:
    per_utterance: dict
    means: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["utterance", *_FIELDS])
            for utt_id in sorted(self.per_utterance):
                row = self.per_utterance[utt_id]
                writer.writerow([utt_id] + ["" if row.get(f) is None else repr(row[f]) for f in _FIELDS])

    def write_means_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.means, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _score_one(utt_id, clean, degraded, paths, adapter):
    row = {
        "stoi": stoi(clean, degraded),
        "segsnr": segmental_snr(clean, degraded),
        "llr": llr(clean, degraded),
        "wss": wss(clean, degraded),
    }
    if adapter is not None and paths is not None:
        pesq = adapter.score(*paths)
        csig, cbak, covl = composite_scores(pesq, row["llr"], row["wss"], row["segsnr"])
        row.update(pesq=pesq, csig=csig, cbak=cbak, covl=covl)
    return utt_id, row


def evaluate(items, adapter: PesqAdapter | None = None) -> ScoreReport:
    """Score (utt_id, clean, degraded[, (clean_path, degraded_path)]) tuples.

    Composites are emitted only when PESQ is available; parallelism is capped
    by the SSLSE_THREADS environment variable.
    """
    jobs = []
    for item in items:
        utt_id, clean, degraded = item[0], item[1], item[2]
        paths = item[3] if len(item) > 3 else None
        jobs.append((utt_id, clean, degraded, paths, adapter))

    workers = int(os.environ.get("SSLSE_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _score_one(*j), jobs))
    else:
        results = [_score_one(*j) for j in jobs]

    per_utterance = dict(results)
    means = {}
    for field_name in _FIELDS:
        values = [row[field_name] for row in per_utterance.values() if row.get(field_name) is not None]
        if values:
            means[field_name] = float(np.mean(values))
    return ScoreReport(per_utterance=per_utterance, means=means)
