"""Layer fusion: simplex-weighted sums, frame-rate alignment, cross-domain concat.

Each operation has a numpy form (analysis / inference on ingested embeddings)
and a graph form used inside the training tape.
"""
from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .encoder import LayerStack
from .errors import ShapeError, UnsupportedStride

COMPOSITIONS = ("ll", "ws", "ll+log1p", "ws+log1p")


class LayerWeights:
    """Simplex-constrained fusion weights realized as softmax over trainable logits."""

    def __init__(self, num_layers: int, dtype=np.float64):
        self.logits = ad.Tensor(np.zeros(num_layers, dtype=dtype), requires_grad=True, name="fusion.logits")

    @property
    def num_layers(self) -> int:
        return self.logits.data.shape[0]

    @property
    def weights(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max()
        e = np.exp(z)
        return e / e.sum()

    def weights_graph(self) -> ad.Tensor:
        return ad.softmax_last(self.logits)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"weights": [float(w) for w in self.weights]}, fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load_weight_values(path) -> np.ndarray:
        with open(path) as fh:
            payload = json.load(fh)
        return np.asarray(payload["weights"], dtype=np.float64)


def weighted_sum(stack: LayerStack, weights) -> np.ndarray:
    """Convex combination of layers, (L, T, D) x (L,) -> (T, D)."""
    w = weights.weights if isinstance(weights, LayerWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (stack.num_layers,):
        raise ShapeError(f"{w.shape[0] if w.ndim else 0} weights for {stack.num_layers} layers")
    return np.tensordot(w, stack.layers, axes=(0, 0))


def weighted_sum_graph(layers, weights: LayerWeights) -> ad.Tensor:
    if len(layers) != weights.num_layers:
        raise ShapeError(f"{weights.num_layers} weights for {len(layers)} layers")
    w = weights.weights_graph()
    out = None
    for idx, layer in enumerate(layers):
        term = ad.mul(layer, ad.slice_op(w, idx))
        out = term if out is None else ad.add(out, term)
    return out


def _check_stride(stride_samples: int, hop: int) -> None:
    if stride_samples != 2 * hop:
        raise UnsupportedStride(
            f"latent stride {stride_samples} is not twice the spectrogram hop {hop}"
        )


def align_duplicate(latent: np.ndarray, spec_frames: int, stride_samples: int = 320, hop: int = 160) -> np.ndarray:
    """Repeat each latent frame twice, then truncate / last-frame-pad to spec_frames."""
    _check_stride(stride_samples, hop)
    latent = np.asarray(latent)
    doubled = np.repeat(latent, 2, axis=0)
    if doubled.shape[0] >= spec_frames:
        return doubled[:spec_frames]
    deficit = spec_frames - doubled.shape[0]
    return np.concatenate([doubled, np.repeat(doubled[-1:], deficit, axis=0)], axis=0)


def align_duplicate_graph(latent: ad.Tensor, spec_frames: int, stride_samples: int = 320, hop: int = 160) -> ad.Tensor:
    _check_stride(stride_samples, hop)
    doubled = ad.repeat2_frames(latent)
    t = doubled.data.shape[-2]
    if t >= spec_frames:
        return ad.slice_op(doubled, (Ellipsis, slice(0, spec_frames), slice(None)))
    last = ad.slice_op(doubled, (Ellipsis, slice(t - 1, t), slice(None)))
    pieces = [doubled] + [last] * (spec_frames - t)
    return ad.concat_frames(pieces)


def concat_cross_domain(latent: np.ndarray, log1p_mag: np.ndarray) -> np.ndarray:
    latent = np.asarray(latent)
    log1p_mag = np.asarray(log1p_mag)
    if latent.shape[0] != log1p_mag.shape[0]:
        raise ShapeError(f"frame mismatch: latent {latent.shape[0]} vs log1p {log1p_mag.shape[0]}")
    return np.concatenate([latent, log1p_mag], axis=-1)


def concat_cross_domain_graph(latent: ad.Tensor, log1p_mag: ad.Tensor) -> ad.Tensor:
    if latent.data.shape[-2] != log1p_mag.data.shape[-2]:
        raise ShapeError(
            f"frame mismatch: latent {latent.data.shape[-2]} vs log1p {log1p_mag.data.shape[-2]}"
        )
    return ad.concat_last([latent, log1p_mag])
