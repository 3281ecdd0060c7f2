"""Toy SSL encoder (conv extractor + self-attention blocks) and embedding file I/O.

The encoder exists to exercise the freeze policies and the layer-fusion
machinery at desk scale; real SSL hidden states are ingested via ``.ssle``
files produced by the exporter package.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dsp import WORK_RATE, Waveform
from .errors import FormatError, InvalidInput, StateError

SSLE_MAGIC = b"SSLE"
SSLE_VERSION = 1

STRIDE_SAMPLES = 320

# Extractor geometry: conv k10/s5 -> conv k8/s4 -> take every 16th frame,
# composing to one latent frame per 320 input samples.
_CONV1_K, _CONV1_S, _CONV1_C = 10, 5, 64
_CONV2_K, _CONV2_S = 8, 4
_SUBSAMPLE = 16
_TAIL_PAD = STRIDE_SAMPLES


class FreezePolicy(enum.Enum):
    FROZEN = "frozen"
    PF = "pf"
    EF = "ef"
    TFS = "tfs"


@dataclass
class LayerStack:
    """Per-layer latent representations, shape (L, T, D), one frame per stride."""

    layers: np.ndarray
    stride_samples: int = STRIDE_SAMPLES
    sample_rate: int = WORK_RATE
    layer0_is_extractor: bool = True

    def __post_init__(self):
        layers = np.asarray(self.layers)
        if layers.ndim != 3:
            raise InvalidInput(f"layer stack must be (L, T, D), got {layers.shape}")
        if not np.all(np.isfinite(layers)):
            raise InvalidInput("layer stack contains non-finite values")
        object.__setattr__(self, "layers", layers)

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def num_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


@dataclass
class ToyEncoder:
    dim: int = 64
    blocks: int = 4
    ff_hidden: int = 128
    seed: int = 0
    dtype: type = np.float64
    params: ad.ParamGroup = field(init=False)

    def __post_init__(self):
        self.params = ad.ParamGroup()
        self._init_params(self.seed)

    def _init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        d, ffh = self.dim, self.ff_hidden
        group = ad.ParamGroup()

        def param(name, shape, fan_in=None):
            if fan_in is None:
                data = np.zeros(shape, dtype=self.dtype)
            else:
                data = ad.uniform_init(rng, shape, fan_in, dtype=self.dtype)
            group.add(name, ad.Tensor(data, requires_grad=True))

        param("extractor.conv1.w", (_CONV1_K, 1, _CONV1_C), fan_in=_CONV1_K)
        param("extractor.conv1.b", (_CONV1_C,))
        param("extractor.conv2.w", (_CONV2_K, _CONV1_C, _CONV1_C), fan_in=_CONV2_K * _CONV1_C)
        param("extractor.conv2.b", (_CONV1_C,))
        param("extractor.proj.w", (_CONV1_C, d), fan_in=_CONV1_C)
        param("extractor.proj.b", (d,))
        for k in range(self.blocks):
            pre = f"encoder.block{k}."
            for ln in ("ln1", "ln2"):
                group.add(pre + ln + ".g", ad.Tensor(np.ones(d, dtype=self.dtype), requires_grad=True))
                group.add(pre + ln + ".b", ad.Tensor(np.zeros(d, dtype=self.dtype), requires_grad=True))
            for w in ("wq", "wk", "wv", "wo"):
                param(pre + "attn." + w, (d, d), fan_in=d)
            param(pre + "ff.w1", (d, ffh), fan_in=d)
            param(pre + "ff.b1", (ffh,))
            param(pre + "ff.w2", (ffh, d), fan_in=ffh)
            param(pre + "ff.b2", (d,))

        if hasattr(self, "params") and len(self.params):
            # reinitialization path: overwrite values in place, keep identities
            for name, t in self.params.items():
                t.data = group[name].data
        else:
            self.params = group

    def reinitialize(self, seed: int) -> None:
        self._init_params(seed)

    # -- forward ------------------------------------------------------------

    def forward_graph(self, x: ad.Tensor):
        """x: (B, N) waveform batch -> list of K+1 latent tensors (B, T, D)."""
        B, n = x.data.shape
        if n < STRIDE_SAMPLES:
            raise InvalidInput(f"input shorter than one latent stride ({STRIDE_SAMPLES} samples)")
        t_out = n // STRIDE_SAMPLES

        padded = np.pad(x.data, ((0, 0), (0, _TAIL_PAD)))
        h = ad.Tensor(padded.reshape(B, n + _TAIL_PAD, 1).astype(self.dtype))
        p = self.params
        h = ad.tanh(ad.add(ad.conv1d(h, p["extractor.conv1.w"], stride=_CONV1_S), p["extractor.conv1.b"]))
        h = ad.tanh(ad.add(ad.conv1d(h, p["extractor.conv2.w"], stride=_CONV2_S), p["extractor.conv2.b"]))
        h = ad.slice_op(h, (slice(None), slice(None, None, _SUBSAMPLE)))
        if h.data.shape[1] < t_out:
            raise StateError("extractor produced fewer frames than the stride law requires")
        h = ad.slice_op(h, (slice(None), slice(0, t_out)))
        h = ad.add(ad.matmul(h, p["extractor.proj.w"]), p["extractor.proj.b"])

        layers = [h]
        scale = ad.Tensor(np.asarray(1.0 / np.sqrt(self.dim), dtype=self.dtype))
        for k in range(self.blocks):
            pre = f"encoder.block{k}."
            xin = layers[-1]
            q_in = ad.layer_norm(xin, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = ad.matmul(q_in, p[pre + "attn.wq"])
            key = ad.matmul(q_in, p[pre + "attn.wk"])
            v = ad.matmul(q_in, p[pre + "attn.wv"])
            scores = ad.mul(ad.matmul(q, ad.transpose(key, (0, 2, 1))), scale)
            ctx = ad.matmul(ad.softmax_last(scores), v)
            h1 = ad.add(xin, ad.matmul(ctx, p[pre + "attn.wo"]))
            f_in = ad.layer_norm(h1, p[pre + "ln2.g"], p[pre + "ln2.b"])
            f_mid = ad.tanh(ad.add(ad.matmul(f_in, p[pre + "ff.w1"]), p[pre + "ff.b1"]))
            f_out = ad.add(ad.matmul(f_mid, p[pre + "ff.w2"]), p[pre + "ff.b2"])
            layers.append(ad.add(h1, f_out))
        return layers

    def forward(self, x: Waveform) -> LayerStack:
        if x.sample_rate != WORK_RATE:
            raise InvalidInput(f"encoder expects {WORK_RATE} Hz input, got {x.sample_rate}")
        with ad.no_tape():
            layers = self.forward_graph(ad.Tensor(x.samples[None, :]))
        stacked = np.stack([layer.data[0] for layer in layers])
        return LayerStack(stacked)


def encoder_forward(x: Waveform, encoder: ToyEncoder) -> LayerStack:
    return encoder.forward(x)


def apply_freeze_policy(encoder: ToyEncoder, policy: FreezePolicy, seed: int = 0) -> ad.ParamGroup:
    """Set trainable flags (and reinitialize for TFS) per the freeze policy."""
    params = encoder.params
    names = params.names()
    has_extractor = any(n.startswith("extractor.") for n in names)
    has_encoder = any(n.startswith("encoder.") for n in names)
    if not (has_extractor and has_encoder):
        raise StateError("parameters are not partitioned into extractor/encoder groups")

    if policy is FreezePolicy.FROZEN:
        params.set_trainable(False)
    elif policy is FreezePolicy.PF:
        params.set_trainable(False, prefix="extractor.")
        params.set_trainable(True, prefix="encoder.")
    elif policy is FreezePolicy.EF:
        params.set_trainable(True)
    elif policy is FreezePolicy.TFS:
        encoder.reinitialize(seed)
        params.set_trainable(True)
    else:  # pragma: no cover
        raise StateError(f"unknown policy {policy}")
    return params


# ---------------------------------------------------------------------------
# .ssle embedding files
# ---------------------------------------------------------------------------

def write_embedding_file(stack: LayerStack, path) -> None:
    L, T, D = stack.layers.shape
    with open(path, "wb") as fh:
        fh.write(SSLE_MAGIC)
        fh.write(struct.pack("<6I", SSLE_VERSION, L, T, D, stack.stride_samples, stack.sample_rate))
        fh.write(np.ascontiguousarray(stack.layers, dtype="<f4").tobytes())


def read_embedding_file(path) -> LayerStack:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SSLE_MAGIC:
        raise FormatError("bad embedding-file magic")
    if len(blob) < 28:
        raise FormatError("truncated embedding-file header")
    version, L, T, D, stride, rate = struct.unpack_from("<6I", blob, 4)
    if version != SSLE_VERSION:
        raise FormatError(f"unsupported embedding-file version {version}")
    expected = 28 + 4 * L * T * D
    if len(blob) != expected:
        raise FormatError(f"payload size {len(blob) - 28} does not match header ({L}x{T}x{D})")
    values = np.frombuffer(blob, dtype="<f4", offset=28).reshape(L, T, D)
    return LayerStack(values.astype(np.float64), stride_samples=stride, sample_rate=rate)
