"""CLI: export --model <id> --wavs <glob> --out <dir> [--no-extractor]."""
from __future__ import annotations

import argparse
import glob
import logging
import sys

from .exporter import ExportJob, JobError, export_layer_states


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssle-export",
                                     description="export model hidden states as .ssle files")
    parser.add_argument("--model", required=True, help="checkpoint identifier or local path")
    parser.add_argument("--wavs", required=True, help="glob of input WAV files (mono, 16 kHz)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--no-extractor", action="store_true",
                        help="drop layer 0 (the feature-extractor output)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    wav_paths = sorted(glob.glob(args.wavs))
    job = ExportJob(model_id=args.model, wav_paths=wav_paths, out_dir=args.out,
                    include_extractor=not args.no_extractor)
    try:
        written = export_layer_states(job)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(written)} files -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
