"""Clean-noisy distance per layer, dataset averaging, and correlation with
learned fusion weights."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .encoder import LayerStack
from .errors import InvalidInput, ShapeError, UndefinedCorrelation

_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class CnCurve:
    raw: np.ndarray
    normalized: np.ndarray
    n_samples: int
    constant: bool = False  # raw curve was flat; normalized defined as all-zero

    @property
    def num_layers(self) -> int:
        return len(self.raw)


def _zscore(rep: np.ndarray) -> np.ndarray:
    # per-dimension statistics over the representation's own frames
    mu = rep.mean(axis=0)
    sigma = np.maximum(rep.std(axis=0), _SIGMA_FLOOR)
    return (rep - mu) / sigma


def cn_distance(clean: LayerStack, noisy: LayerStack, layer: int) -> float:
    """Mean squared distance between z-scored clean and noisy frames at one layer."""
    if clean.layers.shape != noisy.layers.shape:
        raise ShapeError(f"stack shapes differ: {clean.layers.shape} vs {noisy.layers.shape}")
    if clean.num_frames < 2:
        raise InvalidInput("need at least 2 frames for z-scoring")
    zc = _zscore(clean.layers[layer])
    zn = _zscore(noisy.layers[layer])
    diff = zc - zn
    return float(np.mean(np.sum(diff * diff, axis=1)))


def minmax_normalize(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = float(np.min(raw)), float(np.max(raw))
    if hi == lo:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def average_curve(samples, per_sample_normalize: bool = False) -> CnCurve:
    """Average per-layer distances over (clean, noisy) stack pairs, then min-max."""
    samples = list(samples)
    if not samples:
        raise InvalidInput("need at least one (clean, noisy) sample")
    n_layers = samples[0][0].num_layers
    curves = []
    for clean, noisy in samples:
        if clean.num_layers != n_layers or noisy.num_layers != n_layers:
            raise ShapeError("inconsistent layer counts across samples")
        curve = np.array([cn_distance(clean, noisy, layer) for layer in range(n_layers)])
        if per_sample_normalize:
            curve, _ = minmax_normalize(curve)
        curves.append(curve)
    raw = np.mean(curves, axis=0)
    normalized, constant = minmax_normalize(raw)
    return CnCurve(raw=raw, normalized=normalized, n_samples=len(samples), constant=constant)


def pearson(a, b, drop_last: int = 0) -> float:
    """Sample Pearson coefficient on the first L - drop_last entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("pearson expects two equal-length vectors")
    if drop_last:
        a = a[:-drop_last]
        b = b[:-drop_last]
    if len(a) < 2:
        raise InvalidInput("need at least 2 entries after drop_last")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt(np.sum(ac * ac) * np.sum(bc * bc))
    if denom == 0.0:
        raise UndefinedCorrelation("constant input sequence")
    return float(np.sum(ac * bc) / denom)


def write_curve_csv(curve: CnCurve, path, weights=None) -> None:
    weights = list(weights) if weights is not None else [float("nan")] * curve.num_layers
    if len(weights) != curve.num_layers:
        raise ShapeError("weight count does not match layer count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "raw_distance", "normalized_distance", "weight"])
        for layer in range(curve.num_layers):
            writer.writerow([layer, repr(float(curve.raw[layer])),
                             repr(float(curve.normalized[layer])), repr(float(weights[layer]))])


def write_summary_json(path, pearson_value: float, drop_last: int, n_samples: int) -> None:
    with open(path, "w") as fh:
        json.dump({"pearson": pearson_value, "drop_last": drop_last, "n_samples": n_samples},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
