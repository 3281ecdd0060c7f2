"""Hidden-state export to the .ssle embedding format.

Layer 0 is the first entry of the checkpoint's standard hidden-state API
(the embedded feature-extractor output); the remaining entries are the
outputs of each encoder layer. Whether a given checkpoint exposes these
pre- or post-layer-normalization follows that API unchanged.

File layout (little endian): magic "SSLE", version u32, then L, T, D,
stride_samples, sample_rate as u32, then L*T*D float32 values stored
layer-major, frame-major.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SSLE_MAGIC = b"SSLE"
SSLE_VERSION = 1
EXPECTED_RATE = 16000

log = logging.getLogger(__name__)


class JobError(Exception):
    """Unusable input, unreachable checkpoint, or refused export."""


@dataclass
class ExportJob:
    model_id: str
    wav_paths: list = field(default_factory=list)
    out_dir: Path = Path(".")
    include_extractor: bool = True


def read_wav_mono_16k(path) -> np.ndarray:
    try:
        rate, samples = wavfile.read(path)
    except Exception as exc:
        raise JobError(f"cannot read WAV file {path}: {exc}") from exc
    if samples.ndim != 1:
        raise JobError(f"{path}: only mono WAV input is supported")
    if rate != EXPECTED_RATE:
        raise JobError(f"{path}: sample rate {rate} != {EXPECTED_RATE}; refusing to resample")
    if samples.dtype == np.int16:
        return samples.astype(np.float32) / 32768.0
    return samples.astype(np.float32)


def load_model(model_id: str):
    import torch
    from transformers import AutoModel

    try:
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise JobError(f"cannot load checkpoint {model_id!r}: {exc}") from exc
    model.eval()
    torch.set_grad_enabled(False)
    return model


def model_stride(model) -> int:
    strides = getattr(model.config, "conv_stride", None)
    if not strides:
        raise JobError("checkpoint config exposes no conv_stride; cannot derive frame rate")
    return int(math.prod(strides))


def hidden_stack(model, samples: np.ndarray, include_extractor: bool) -> np.ndarray:
    """(L, T, D) float32 array of all layer outputs for one utterance."""
    import torch

    with torch.no_grad():
        out = model(torch.from_numpy(samples)[None, :], output_hidden_states=True)
    states = out.hidden_states  # length = encoder layers + 1
    if not include_extractor:
        states = states[1:]
    return np.stack([s[0].numpy().astype(np.float32) for s in states])


def write_ssle(layers: np.ndarray, stride_samples: int, path, sample_rate: int = EXPECTED_RATE) -> None:
    layers = np.ascontiguousarray(layers, dtype="<f4")
    if layers.ndim != 3:
        raise JobError(f"layer stack must be (L, T, D), got shape {layers.shape}")
    L, T, D = layers.shape
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(SSLE_MAGIC)
        fh.write(struct.pack("<6I", SSLE_VERSION, L, T, D, stride_samples, sample_rate))
        fh.write(layers.tobytes())
    Path(tmp).replace(path)


def truncate_to_shorter(a: np.ndarray, b: np.ndarray, label: str = "") -> tuple:
    """Equalize frame counts of a clean/noisy pair (model edge padding can differ)."""
    if a.shape[1] != b.shape[1]:
        t = min(a.shape[1], b.shape[1])
        log.warning("frame-count mismatch%s: %d vs %d, truncating to %d",
                    f" for {label}" if label else "", a.shape[1], b.shape[1], t)
        a, b = a[:, :t], b[:, :t]
    return a, b


def export_layer_states(job: ExportJob, model=None) -> list:
    """Write one .ssle file per wav; returns the output paths."""
    if not job.wav_paths:
        raise JobError("no input wavs")
    if model is None:
        model = load_model(job.model_id)
    stride = model_stride(model)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for wav_path in job.wav_paths:
        wav_path = Path(wav_path)
        samples = read_wav_mono_16k(wav_path)
        layers = hidden_stack(model, samples, job.include_extractor)
        out_path = out_dir / (wav_path.stem + ".ssle")
        write_ssle(layers, stride, out_path)
        written.append(out_path)
        log.info("wrote %s: %d layers x %d frames x %d dims", out_path, *layers.shape)
    return written
