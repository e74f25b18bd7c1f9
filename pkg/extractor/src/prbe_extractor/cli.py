"""Extractor command line: ``extract`` writes containers, ``verify`` checks them."""

from __future__ import annotations

import argparse
import logging
import sys

from .container import verify_format
from .extract import ExtractorJob, extract
from .models import ModelError, REGISTRY
from .wavio import WavError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prbe-extract")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="export per-layer embeddings to .prbe")
    p.add_argument("--model", required=True,
                   help=f"registered id ({', '.join(sorted(REGISTRY))}) or a checkpoint path")
    p.add_argument("--layers", required=True, help="comma-separated layer indices")
    p.add_argument("--random-init", action="store_true",
                   help="use seeded random weights instead of the checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name", default="dataset")
    p.add_argument("--chunk-s", type=float, default=30.0)
    p.add_argument("--overlap-s", type=float, default=1.0)
    p.add_argument("audio", nargs="+", help="input WAV files")

    p = sub.add_parser("verify", help="validate .prbe container files")
    p.add_argument("paths", nargs="+")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.command == "verify":
        failed = False
        for path in args.paths:
            report = verify_format(path)
            print(report.summary())
            failed = failed or not report.ok
        return 2 if failed else 0

    job = ExtractorJob(
        model_id=args.model,
        layers=[int(v) for v in args.layers.split(",")],
        audio_paths=args.audio,
        output_dir=args.out,
        random_init=args.random_init,
        seed=args.seed,
        chunk_s=args.chunk_s,
        overlap_s=args.overlap_s,
        dataset_name=args.dataset_name,
    )
    try:
        result = extract(job)
    except (ModelError, WavError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for layer, path in sorted(result.containers.items()):
        print(f"layer {layer}: {path}")
    print(f"manifest: {result.manifest_path} (d={result.dim})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
