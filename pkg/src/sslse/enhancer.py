"""Mask-predicting SE network (linear -> BLSTM x2 -> linear -> sigmoid),
signal-approximation L1 training, and noisy-phase enhancement."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import dsp, fusion
from .encoder import FreezePolicy, LayerStack, ToyEncoder, apply_freeze_policy
from .errors import InvalidInput, ShapeError, StateError

BINS = dsp.WINDOW_LEN // 2 + 1


class MaskModel:
    """linear(input_dim -> hidden) -> BLSTM stack -> linear(2*hidden -> bins) -> sigmoid."""

    def __init__(self, input_dim: int, hidden: int = 256, layers: int = 2,
                 output_dim: int = BINS, seed: int = 0, dtype=np.float32):
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = layers
        self.output_dim = output_dim
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        p = ad.ParamGroup()

        def weight(name, shape, fan_in):
            p.add(name, ad.Tensor(ad.uniform_init(rng, shape, fan_in, dtype=dtype), requires_grad=True))

        def bias(name, size):
            p.add(name, ad.Tensor(np.zeros(size, dtype=dtype), requires_grad=True))

        weight("mask.lin_in.w", (input_dim, hidden), input_dim)
        bias("mask.lin_in.b", hidden)
        for layer in range(layers):
            in_dim = hidden if layer == 0 else 2 * hidden
            for direction in ("fw", "bw"):
                pre = f"mask.blstm{layer}.{direction}."
                weight(pre + "w_ih", (in_dim, 4 * hidden), in_dim)
                weight(pre + "w_hh", (hidden, 4 * hidden), hidden)
                bias(pre + "b", 4 * hidden)
        weight("mask.lin_out.w", (2 * hidden, output_dim), 2 * hidden)
        bias("mask.lin_out.b", output_dim)
        self.params = p


def mask_forward_graph(model: MaskModel, feature: ad.Tensor) -> ad.Tensor:
    if feature.data.shape[-1] != model.input_dim:
        raise ShapeError(f"feature width {feature.data.shape[-1]} != model input_dim {model.input_dim}")
    p = model.params
    h = ad.add(ad.matmul(feature, p["mask.lin_in.w"]), p["mask.lin_in.b"])
    for layer in range(model.layers):
        fw_pre = f"mask.blstm{layer}.fw."
        bw_pre = f"mask.blstm{layer}.bw."
        fw = ad.lstm_seq(h, p[fw_pre + "w_ih"], p[fw_pre + "w_hh"], p[fw_pre + "b"])
        rev = ad.reverse_time(h)
        bw = ad.reverse_time(ad.lstm_seq(rev, p[bw_pre + "w_ih"], p[bw_pre + "w_hh"], p[bw_pre + "b"]))
        h = ad.concat_last([fw, bw])
    return ad.sigmoid(ad.add(ad.matmul(h, p["mask.lin_out.w"]), p["mask.lin_out.b"]))


def mask_forward(model: MaskModel, feature: np.ndarray) -> np.ndarray:
    feature = np.asarray(feature, dtype=model.dtype)
    if feature.ndim != 2:
        raise ShapeError(f"feature must be (frames, input_dim), got {feature.shape}")
    with ad.no_tape():
        out = mask_forward_graph(model, ad.Tensor(feature[None]))
    return out.data[0]


def sa_loss(mask: np.ndarray, noisy_log1p: np.ndarray, clean_log1p: np.ndarray) -> float:
    mask = np.asarray(mask)
    if not (mask.shape == np.shape(noisy_log1p) == np.shape(clean_log1p)):
        raise ShapeError("sa_loss requires three shape-identical arrays")
    return float(np.mean(np.abs(mask * noisy_log1p - clean_log1p)))


def sa_loss_graph(mask: ad.Tensor, noisy_log1p: ad.Tensor, clean_log1p: ad.Tensor) -> ad.Tensor:
    if not (mask.data.shape == noisy_log1p.data.shape == clean_log1p.data.shape):
        raise ShapeError("sa_loss requires three shape-identical arrays")
    return ad.mean_all(ad.abs_val(ad.sub(ad.mul(mask, noisy_log1p), clean_log1p)))


@dataclass
class TrainConfig:
    crop_samples: int = data_mod.CROP_SAMPLES
    batch_size: int = 8
    lr: float = 1e-4
    max_steps: int = 500
    val_fraction: float = 0.05
    seed: int = 0
    policy: str = "frozen"
    composition: str = "ws+log1p"
    hidden: int = 256
    blstm_layers: int = 2
    encoder_dim: int = 64
    encoder_blocks: int = 4
    eval_every: int = 25
    patience: int = 5
    dtype: str = "float32"

    def __post_init__(self):
        if self.crop_samples != 128 * dsp.HOP:
            raise InvalidInput("crop_samples must be 128 frames x 160 hop = 20480")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInput("val_fraction must lie in (0, 1)")
        if self.composition not in fusion.COMPOSITIONS:
            raise InvalidInput(f"composition must be one of {fusion.COMPOSITIONS}")
        FreezePolicy(self.policy)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def input_dim(self) -> int:
        width = self.encoder_dim
        if self.composition.endswith("+log1p"):
            width += BINS
        return width


@dataclass
class TrainResult:
    model: MaskModel
    encoder: ToyEncoder
    layer_weights: fusion.LayerWeights
    config: TrainConfig
    history: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_val_loss: float = float("nan")


def _batch_log1p(crops: np.ndarray, dtype) -> np.ndarray:
    feats = [dsp.stft(dsp.Waveform(c, dsp.WORK_RATE)).log1p_mag for c in crops]
    return np.stack(feats).astype(dtype)


def _build_loss(model, encoder, layer_weights, cfg, noisy_crops, noisy_l1p, clean_l1p,
                encoder_frozen: bool) -> ad.Tensor:
    spec_frames = noisy_l1p.shape[1]
    x = ad.Tensor(noisy_crops.astype(cfg.np_dtype))
    if encoder_frozen:
        with ad.no_tape():
            layers = encoder.forward_graph(x)
    else:
        layers = encoder.forward_graph(x)
    if cfg.composition.startswith("ws"):
        latent = fusion.weighted_sum_graph(layers, layer_weights)
    else:
        latent = layers[-1]
    aligned = fusion.align_duplicate_graph(latent, spec_frames)
    noisy_t = ad.Tensor(noisy_l1p)
    if cfg.composition.endswith("+log1p"):
        feat = fusion.concat_cross_domain_graph(aligned, noisy_t)
    else:
        feat = aligned
    mask = mask_forward_graph(model, feat)
    return sa_loss_graph(mask, noisy_t, ad.Tensor(clean_l1p))


def train(pairs, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Train the mask model (and encoder/fusion weights per policy) on (noisy, clean) pairs."""
    if len(pairs) < 2:
        raise InvalidInput("need at least 2 utterances")
    for pair in pairs:
        if pair.clean.sample_rate != dsp.WORK_RATE:
            raise InvalidInput(f"pair {pair.id} is not at {dsp.WORK_RATE} Hz")

    dtype = cfg.np_dtype
    rng = np.random.default_rng(cfg.seed)
    plan = data_mod.split([p.id for p in pairs], cfg.val_fraction, cfg.seed)
    by_id = {p.id: p for p in pairs}
    train_pairs = [by_id[i] for i in plan.train_ids]
    val_pairs = [by_id[i] for i in plan.val_ids]

    encoder = ToyEncoder(dim=cfg.encoder_dim, blocks=cfg.encoder_blocks, seed=cfg.seed, dtype=dtype)
    apply_freeze_policy(encoder, FreezePolicy(cfg.policy), seed=cfg.seed + 1)
    encoder_frozen = not encoder.params.trainable()
    layer_weights = fusion.LayerWeights(cfg.encoder_blocks + 1, dtype=dtype)
    if not cfg.composition.startswith("ws"):
        # last-layer compositions never touch the fusion logits
        layer_weights.logits.requires_grad = False
    model = MaskModel(cfg.input_dim, cfg.hidden, cfg.blstm_layers, BINS, seed=cfg.seed + 2, dtype=dtype)

    all_params = ad.ParamGroup()
    all_params.merge(model.params)
    all_params.add("fusion.logits", layer_weights.logits)
    all_params.merge(encoder.params)
    optimizer = ad.Adam(all_params, lr=cfg.lr)

    # deterministic offset-0 crops for validation
    def fixed_crop(w):
        s = w.samples
        if len(s) < cfg.crop_samples:
            s = np.pad(s, (0, cfg.crop_samples - len(s)))
        return s[: cfg.crop_samples]

    val_noisy = np.stack([fixed_crop(p.noisy) for p in val_pairs])
    val_clean = np.stack([fixed_crop(p.clean) for p in val_pairs])
    val_noisy_l1p = _batch_log1p(val_noisy, dtype)
    val_clean_l1p = _batch_log1p(val_clean, dtype)

    def val_loss() -> float:
        with ad.no_tape():
            loss = _build_loss(model, encoder, layer_weights, cfg,
                               val_noisy, val_noisy_l1p, val_clean_l1p, encoder_frozen=True)
        return float(loss.data)

    history: list[tuple[int, str, float]] = []
    initial = val_loss()
    history.append((0, "val", initial))
    best = initial
    best_state = {name: t.data.copy() for name, t in all_params.items()}
    stale = 0

    for step in range(1, cfg.max_steps + 1):
        idxs = rng.integers(0, len(train_pairs), size=cfg.batch_size)
        crops = [data_mod.crop_pair(train_pairs[i], cfg.crop_samples, rng) for i in idxs]
        noisy_crops = np.stack([c[0] for c in crops])
        clean_crops = np.stack([c[1] for c in crops])
        noisy_l1p = _batch_log1p(noisy_crops, dtype)
        clean_l1p = _batch_log1p(clean_crops, dtype)

        all_params.zero_grad()
        loss = _build_loss(model, encoder, layer_weights, cfg,
                           noisy_crops, noisy_l1p, clean_l1p, encoder_frozen)
        ad.backward(loss)
        optimizer.step()
        history.append((step, "train", float(loss.data)))

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            v = val_loss()
            history.append((step, "val", v))
            if v < best:
                best = v
                best_state = {name: t.data.copy() for name, t in all_params.items()}
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break

    for name, t in all_params.items():
        t.data = best_state[name]

    result = TrainResult(model=model, encoder=encoder, layer_weights=layer_weights, config=cfg,
                         history=history, initial_val_loss=initial, best_val_loss=best)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "split", "loss"])
            writer.writerows([(s, sp, repr(v)) for s, sp, v in history])
        save_checkpoint(out_dir, result)
        layer_weights.to_json(out_dir / "weights.json")
    return result


def enhance_utterance(model: MaskModel, source, layer_weights, noisy: dsp.Waveform,
                      composition: str) -> dsp.Waveform:
    """Mask the noisy log1p magnitude and reconstruct with the noisy phase."""
    if composition not in fusion.COMPOSITIONS:
        raise InvalidInput(f"composition must be one of {fusion.COMPOSITIONS}")
    spec = dsp.stft(noisy)
    if isinstance(source, ToyEncoder):
        stack = source.forward(noisy)
    elif isinstance(source, LayerStack):
        stack = source
    else:
        raise StateError("source must be a ToyEncoder or a LayerStack")

    if composition.startswith("ws"):
        latent = fusion.weighted_sum(stack, layer_weights)
    else:
        latent = stack.layers[-1]
    aligned = fusion.align_duplicate(latent, spec.n_frames, stack.stride_samples, spec.frame_hop)
    if composition.endswith("+log1p"):
        feat = fusion.concat_cross_domain(aligned, spec.log1p_mag)
    else:
        feat = aligned
    if feat.shape[1] != model.input_dim:
        raise StateError(
            f"composition {composition!r} yields width {feat.shape[1]} but checkpoint expects {model.input_dim}"
        )
    mask = mask_forward(model, feat)
    enhanced_mag = np.expm1(mask * spec.log1p_mag)
    out = dsp.istft(enhanced_mag, spec.phase, spec.window_len, spec.frame_hop, out_len=len(noisy))
    return dsp.Waveform(out, noisy.sample_rate)


# ---------------------------------------------------------------------------
# checkpoints: SENP tensor file + JSON sidecar
# ---------------------------------------------------------------------------

def save_checkpoint(out_dir, result: TrainResult) -> None:
    out_dir = Path(out_dir)
    group = ad.ParamGroup()
    group.merge(result.model.params)
    group.add("fusion.logits", result.layer_weights.logits)
    group.merge(result.encoder.params)
    ad.save_params(group, out_dir / "model.senp")
    cfg = result.config
    meta = {
        "composition": cfg.composition,
        "input_dim": cfg.input_dim,
        "policy": cfg.policy,
        "layer_weights": [float(w) for w in result.layer_weights.weights],
        "hidden": cfg.hidden,
        "blstm_layers": cfg.blstm_layers,
        "encoder_dim": cfg.encoder_dim,
        "encoder_blocks": cfg.encoder_blocks,
        "seed": cfg.seed,
    }
    with open(out_dir / "checkpoint.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Returns (model, encoder, layer_weights, meta) restored from a run directory."""
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "checkpoint.json") as fh:
        meta = json.load(fh)
    model = MaskModel(meta["input_dim"], meta["hidden"], meta["blstm_layers"], BINS, dtype=np.float32)
    encoder = ToyEncoder(dim=meta["encoder_dim"], blocks=meta["encoder_blocks"], dtype=np.float32)
    layer_weights = fusion.LayerWeights(meta["encoder_blocks"] + 1, dtype=np.float32)
    group = ad.ParamGroup()
    group.merge(model.params)
    group.add("fusion.logits", layer_weights.logits)
    group.merge(encoder.params)
    ad.load_params(group, ckpt_dir / "model.senp")
    return model, encoder, layer_weights, meta
