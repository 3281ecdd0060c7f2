"""Single executable orchestrating the pipeline.

Subcommands: prepare, synth, embed, train, enhance, analyze-cn, evaluate,
gradcheck, repro-table. Every run writes a manifest (config echo, seed,
git describe, timings) into its output directory. Exit codes: 0 ok,
1 domain error, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, data, dsp, enhancer, fusion, metrics
from . import autodiff as ad
from .encoder import LayerStack, ToyEncoder, read_embedding_file, write_embedding_file
from .errors import InvalidInput, SslseError

_TRAIN_KEYS = set(enhancer.TrainConfig.__dataclass_fields__)
_ANALYSIS_KEYS = {"drop_last", "sample_count", "per_sample_normalize"}
_TOP_KEYS = {"seed", "train", "pesq_command", "pesq_pattern", "analysis"}


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    bad_train = set(cfg.get("train", {})) - _TRAIN_KEYS
    if bad_train:
        raise InvalidInput(f"unknown train config keys: {sorted(bad_train)}")
    bad_analysis = set(cfg.get("analysis", {})) - _ANALYSIS_KEYS
    if bad_analysis:
        raise InvalidInput(f"unknown analysis config keys: {sorted(bad_analysis)}")
    return cfg


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def write_manifest(out_dir, args_ns, config, started, extra=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": vars(args_ns).copy(),
        "config": config,
        "git_describe": _git_describe(),
        "started_unix": started,
        "elapsed_s": time.time() - started,
    }
    manifest["command"].pop("func", None)
    # "run_manifest" so it never collides with a corpus manifest.json in the same dir
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _train_config(args, config) -> enhancer.TrainConfig:
    fields = dict(config.get("train", {}))
    if "seed" in config and "seed" not in fields:
        fields["seed"] = config["seed"]
    for key in ("composition", "policy", "seed", "max_steps", "batch_size", "lr",
                "hidden", "eval_every"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            fields[key] = value
    return enhancer.TrainConfig(**fields)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args):
    started = time.time()
    in_dir, out_dir = Path(args.in_dir), Path(args.out)
    subdirs = [d for d in ("clean", "noisy") if (in_dir / d).is_dir()] or [""]
    count = 0
    for sub in subdirs:
        src = in_dir / sub if sub else in_dir
        dst = out_dir / sub if sub else out_dir
        dst.mkdir(parents=True, exist_ok=True)
        for wav_path in sorted(src.glob("*.wav")):
            w = data.read_wav(wav_path)
            if w.sample_rate != args.rate:
                w = dsp.resample(w, args.rate)
            data.write_wav(w, dst / wav_path.name)
            count += 1
    if count == 0:
        raise InvalidInput(f"no WAV files found under {in_dir}")
    write_manifest(out_dir, args, {}, started)
    print(f"prepared {count} files at {args.rate} Hz -> {out_dir}")
    return 0


def cmd_synth(args):
    started = time.time()
    snrs = [float(s) for s in args.snrs.split(",")]
    if args.clean_dir and args.noise_dir:
        pairs = data.synth_corpus(args.clean_dir, args.noise_dir, snrs, seed=args.seed)
    else:
        pairs = data.synth_smoke_corpus(n_utts=args.n_utts, duration=args.duration,
                                        snrs=snrs, seed=args.seed)
    data.save_corpus(pairs, args.out)
    write_manifest(args.out, args, {}, started)
    print(f"wrote {len(pairs)} utterance pairs -> {args.out}")
    return 0


def cmd_embed(args):
    started = time.time()
    out_dir = Path(args.out)
    enc = ToyEncoder(dim=args.dim, blocks=args.blocks, seed=args.seed)
    sides = ["clean", "noisy"] if args.which == "both" else [args.which]
    count = 0
    for side in sides:
        src = Path(args.corpus) / side
        dst = out_dir / f"{side}_emb"
        dst.mkdir(parents=True, exist_ok=True)
        for wav_path in sorted(src.glob("*.wav")):
            stack = enc.forward(data.read_wav(wav_path))
            write_embedding_file(stack, dst / (wav_path.stem + ".ssle"))
            count += 1
    write_manifest(out_dir, args, {}, started)
    print(f"wrote {count} embedding files -> {out_dir}")
    return 0


def cmd_train(args):
    started = time.time()
    config = load_config(args.config)
    cfg = _train_config(args, config)
    pairs = data.load_corpus(args.corpus)
    result = enhancer.train(pairs, cfg, out_dir=args.out)
    write_manifest(args.out, args, asdict(cfg), started)
    print(f"trained {cfg.composition}/{cfg.policy}: initial val {result.initial_val_loss:.6f}, "
          f"best val {result.best_val_loss:.6f} -> {args.out}")
    return 0


def cmd_enhance(args):
    started = time.time()
    model, enc, layer_weights, meta = enhancer.load_checkpoint(args.ckpt)
    in_path = Path(args.in_path)
    wavs = sorted(in_path.glob("*.wav")) if in_path.is_dir() else [in_path]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for wav_path in wavs:
        noisy = data.read_wav(wav_path)
        if args.emb:
            source = read_embedding_file(Path(args.emb) / (wav_path.stem + ".ssle"))
        else:
            source = enc
        enhanced = enhancer.enhance_utterance(model, source, layer_weights, noisy,
                                              meta["composition"])
        data.write_wav(enhanced, out_dir / wav_path.name)
    write_manifest(out_dir, args, meta, started)
    print(f"enhanced {len(wavs)} files -> {out_dir}")
    return 0


def cmd_analyze_cn(args):
    started = time.time()
    config = load_config(args.config)
    options = dict(config.get("analysis", {}))
    drop_last = args.drop_last if args.drop_last is not None else options.get("drop_last", 0)
    sample_count = args.sample_count if args.sample_count is not None else options.get("sample_count", 200)
    per_sample = bool(options.get("per_sample_normalize", False))
    seed = args.seed if args.seed is not None else config.get("seed", 0)

    clean_files = sorted(Path(args.clean_emb).glob("*.ssle"))
    noisy_by_stem = {p.stem: p for p in Path(args.noisy_emb).glob("*.ssle")}
    stems = [p.stem for p in clean_files if p.stem in noisy_by_stem]
    if not stems:
        raise InvalidInput("no matching clean/noisy embedding pairs")
    rng = np.random.default_rng(seed)
    if len(stems) > sample_count:
        stems = [stems[i] for i in sorted(rng.choice(len(stems), size=sample_count, replace=False))]

    samples = []
    for stem in stems:
        clean = read_embedding_file(Path(args.clean_emb) / (stem + ".ssle"))
        noisy = read_embedding_file(noisy_by_stem[stem])
        t = min(clean.num_frames, noisy.num_frames)
        if clean.num_frames != noisy.num_frames:
            clean = LayerStack(clean.layers[:, :t], clean.stride_samples, clean.sample_rate)
            noisy = LayerStack(noisy.layers[:, :t], noisy.stride_samples, noisy.sample_rate)
        samples.append((clean, noisy))
    curve = analysis.average_curve(samples, per_sample_normalize=per_sample)

    weights = None
    pearson_value = None
    if args.weights:
        weights = fusion.LayerWeights.load_weight_values(args.weights)
        pearson_value = analysis.pearson(curve.normalized, weights, drop_last=drop_last)
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_curve_csv(curve, out_csv, weights)
    analysis.write_summary_json(out_csv.with_suffix(".summary.json"),
                                pearson_value, drop_last, curve.n_samples)
    write_manifest(out_csv.parent, args, {"analysis": options}, started)
    print(f"CN curve over {curve.n_samples} samples -> {out_csv}"
          + (f" (pearson {pearson_value:.4f})" if pearson_value is not None else ""))
    return 0


def cmd_evaluate(args):
    started = time.time()
    config = load_config(args.config)
    command = args.pesq_command or config.get("pesq_command")
    adapter = None
    if command:
        adapter = metrics.PesqAdapter(command, config.get("pesq_pattern", r"[-+]?\d+(?:\.\d+)?"))
    clean_dir, degraded_dir = Path(args.clean_dir), Path(args.degraded_dir)
    items = []
    for clean_path in sorted(clean_dir.glob("*.wav")):
        degraded_path = degraded_dir / clean_path.name
        if not degraded_path.exists():
            continue
        clean = data.read_wav(clean_path)
        degraded = data.read_wav(degraded_path)
        n = min(len(clean), len(degraded))
        items.append((clean_path.stem,
                      dsp.Waveform(clean.samples[:n], clean.sample_rate),
                      dsp.Waveform(degraded.samples[:n], degraded.sample_rate),
                      (clean_path, degraded_path)))
    if not items:
        raise InvalidInput("no matching clean/degraded WAV pairs")
    report = metrics.evaluate(items, adapter)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "scores.csv")
    report.write_means_json(out_dir / "means.json")
    write_manifest(out_dir, args, {"pesq_command": command}, started)
    print("means: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.means.items())))
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    failures = 0
    for seed_idx in range(args.seeds):
        local = np.random.default_rng(rng.integers(0, 2**63))
        x = ad.Tensor(local.standard_normal((2, 6, 5)), requires_grad=True)
        wih = ad.Tensor(local.standard_normal((5, 16)) * 0.4, requires_grad=True)
        whh = ad.Tensor(local.standard_normal((4, 16)) * 0.4, requires_grad=True)
        b = ad.Tensor(local.standard_normal(16) * 0.1, requires_grad=True)
        err = ad.finite_diff_check(
            lambda: ad.mean_all(ad.abs_val(ad.lstm_seq(x, wih, whh, b))), [x, wih, whh, b]
        )
        ok = err < 1e-6
        failures += 0 if ok else 1
        print(f"seed {seed_idx}: lstm max rel err {err:.3e} {'ok' if ok else 'FAIL'}")
    return 0 if failures == 0 else 1


def cmd_repro_table(args):
    started = time.time()
    config = load_config(args.config)
    pairs = data.load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    plan = data.split([p.id for p in pairs], 0.2, config.get("seed", args.seed))
    by_id = {p.id: p for p in pairs}
    train_pairs = [by_id[i] for i in plan.train_ids]
    held = [by_id[i] for i in plan.val_ids]

    rows = []
    noisy_report = metrics.evaluate([(p.id, p.clean, p.noisy) for p in held])
    rows.append(("noisy", noisy_report.means))
    for composition in fusion.COMPOSITIONS:
        cfg = _train_config(args, config)
        cfg = enhancer.TrainConfig(**{**asdict(cfg), "composition": composition})
        result = enhancer.train(train_pairs, cfg, out_dir=out_dir / composition.replace("+", "_"))
        enhanced = [(p.id, p.clean,
                     enhancer.enhance_utterance(result.model, result.encoder,
                                                result.layer_weights, p.noisy, composition))
                    for p in held]
        rows.append((composition, metrics.evaluate(enhanced).means))

    import csv as csv_mod
    with open(out_dir / "table.csv", "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["method", "stoi", "segsnr", "llr", "wss"])
        for method, means in rows:
            writer.writerow([method] + [repr(means.get(k, float("nan")))
                                        for k in ("stoi", "segsnr", "llr", "wss")])
    write_manifest(out_dir, args, config, started)
    print(f"composition grid -> {out_dir / 'table.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslse", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("prepare", help="resample/verify a corpus to the working rate")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=int, default=dsp.WORK_RATE)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a synthetic clean/noisy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-utts", type=int, default=20)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--snrs", default="0,5,10,15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clean-dir")
    p.add_argument("--noise-dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="write toy-encoder .ssle embeddings for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--which", choices=["clean", "noisy", "both"], default="both")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the SE model on a corpus")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--composition", choices=list(fusion.COMPOSITIONS))
    p.add_argument("--policy", choices=["frozen", "pf", "ef", "tfs"])
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance WAV file(s) with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emb", help="directory of .ssle stacks to use instead of the toy encoder")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("analyze-cn", help="clean-noisy distance curve from embedding dirs")
    p.add_argument("--config")
    p.add_argument("--clean-emb", required=True)
    p.add_argument("--noisy-emb", required=True)
    p.add_argument("--weights", help="weights.json from a training run")
    p.add_argument("--drop-last", type=int, dest="drop_last")
    p.add_argument("--sample-count", type=int, dest="sample_count")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_analyze_cn)

    p = sub.add_parser("evaluate", help="objective metrics over clean/degraded pairs")
    p.add_argument("--config")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--degraded-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pesq-command", dest="pesq_command")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training graphs")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("repro-table", help="run the 4-composition grid and emit a score table")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.set_defaults(func=cmd_repro_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SslseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
