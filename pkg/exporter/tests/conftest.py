import numpy as np
import pytest
import torch
from scipy.io import wavfile
from transformers import Wav2Vec2Config, Wav2Vec2Model


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Local miniature wav2vec2-style checkpoint; no downloads."""
    torch.manual_seed(0)
    config = Wav2Vec2Config(
        vocab_size=32,
        hidden_size=24,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        conv_dim=(16, 16, 16),
        conv_kernel=(10, 3, 3),
        conv_stride=(5, 2, 2),
        num_conv_pos_embeddings=16,
        num_conv_pos_embedding_groups=4,
    )
    model = Wav2Vec2Model(config)
    path = tmp_path_factory.mktemp("ckpt") / "tiny-w2v2"
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def wav_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("wavs")
    rng = np.random.default_rng(0)
    t = np.arange(4000) / 16000
    for i in range(3):
        clean = (0.3 * np.sin(2 * np.pi * (200 + 60 * i) * t)).astype(np.float32)
        noisy = (clean + 0.1 * rng.standard_normal(len(t))).astype(np.float32)
        wavfile.write(root / f"utt{i}_clean.wav", 16000, clean)
        wavfile.write(root / f"utt{i}_noisy.wav", 16000, noisy)
    return root
