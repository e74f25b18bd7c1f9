"""Command-line entry point.

Subcommands: sweep, ablate, evaluate, baseline, plot, validate, synth.
Exit codes: 0 success, 2 validation failure, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, runner, sidecar, synth
from .errors import BioprobeError, DivergenceError, FormatError, ValidationError
from .probe import evaluate_probe
from .recurrent import evaluate_bilstm, evaluate_esn
from .store import SINGLE_LABEL, load_manifest, read_container

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bioprobe")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="train every (layer, learning-rate) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("ablate", help="metric per ablation level at a fixed layer")
    p.add_argument("--config", required=True)
    p.add_argument("--transform", required=True, choices=["noise", "pitch"])
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")

    p = sub.add_parser("evaluate", help="score a saved head on one split")
    p.add_argument("--head", required=True)
    p.add_argument("--container", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])

    p = sub.add_parser("baseline", help="random baseline for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])

    p = sub.add_parser("plot", help="render a report CSV as an SVG line chart")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="validate containers and manifests")
    p.add_argument("paths", nargs="+")

    p = sub.add_parser("synth", help="generate synthetic fixture datasets")
    p.add_argument("kind", choices=["separable", "needle"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--examples", type=int)
    p.add_argument("--layers", default="0", help="comma-separated layer indices")

    return parser


def _overrides(args, keys) -> dict:
    return {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}


def _cmd_sweep(args) -> int:
    config = runner.load_experiment_config(
        args.config, _overrides(args, ("seed", "output_dir", "workers", "epochs"))
    )
    table = runner.run_sweep(config)
    best = table.best
    print(f"report: {Path(config.output_dir) / 'report.csv'}")
    print(
        f"best: layer {best.layer} lr {best.learning_rate:g} "
        f"dev {best.dev_metric:.4f} test {best.test_metric:.4f} "
        f"(baseline {table.baseline:.4f})"
    )
    return EXIT_OK


def _cmd_ablate(args) -> int:
    payload = json.loads(Path(args.config).read_text())
    ablation = payload.get("ablation")
    if not ablation:
        raise ValidationError("config has no 'ablation' section")
    levels = {float(k): v for k, v in ablation.get("levels", {}).items()}
    config = runner.load_experiment_config(
        args.config, _overrides(args, ("seed", "output_dir"))
    )
    table = runner.run_ablation(
        config,
        args.transform,
        levels,
        extractor_model=ablation.get("extractor_model", "<model>"),
    )
    for value, row in zip(table.levels, table.rows):
        print(f"{args.transform} {value:g}: test {row.test_metric:.4f}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    sequences = read_container(args.container)
    examples = runner.labeled_split(manifest, sequences, args.split)
    kind, _tensors = sidecar.load_head(args.head)
    space = manifest.label_space
    if kind == sidecar.HEAD_LINEAR:
        trained = sidecar.load_trained_probe(args.head)
        value = evaluate_probe(examples, trained.probe, trained.attention, space)
    elif kind == sidecar.HEAD_ESN:
        value = evaluate_esn(sidecar.load_trained_esn(args.head), examples, space)
    elif kind == sidecar.HEAD_BILSTM:
        value = evaluate_bilstm(sidecar.load_trained_bilstm(args.head), examples, space)
    else:
        raise FormatError(f"unknown head kind {kind!r}")
    metric_name = "accuracy" if space.task_kind == SINGLE_LABEL else "mAP"
    print(f"{args.split} {metric_name}: {value:.6f}")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    manifest = load_manifest(args.manifest)
    space = manifest.label_space
    records = manifest.records_for_split(args.split)
    if space.task_kind == SINGLE_LABEL:
        targets = np.array([rec.labels[0] for rec in records], dtype=np.int64)
    else:
        targets = np.zeros((len(records), space.num_labels), dtype=np.int64)
        for i, rec in enumerate(records):
            targets[i, list(rec.labels)] = 1
    print(f"random baseline ({args.split}): {metrics.random_baseline(space, targets):.6f}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    table = runner.report_from_csv(Path(args.report).read_bytes())
    if table.levels is not None:
        series = list(zip(table.levels, (r.test_metric for r in table.rows)))
        x_label = "ablation level"
    else:
        series = runner.layer_series(table)
        x_label = "layer"
    runner.emit_plot(series, x_label=x_label, y_label="test metric", path=args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    failed = False
    for raw in args.paths:
        path = Path(raw)
        try:
            if path.suffix == ".prbe":
                sequences = read_container(path)
                dims = sequences[0].dim if sequences else 0
                print(f"OK {path} ({len(sequences)} sequences, d={dims})")
            elif path.suffix == ".jsonl":
                manifest = load_manifest(path)
                print(
                    f"OK {path} ({len(manifest.records)} records, "
                    f"ratio {manifest.split_ratio()})"
                )
            else:
                raise ValidationError(f"{path}: unknown artifact type")
        except (BioprobeError, OSError) as exc:
            print(f"FAIL {path}: {exc}")
            failed = True
    return EXIT_VALIDATION if failed else EXIT_OK


def _cmd_synth(args) -> int:
    layers = tuple(int(v) for v in args.layers.split(","))
    if args.kind == "separable":
        dataset = synth.make_separable_dataset(
            n_examples=args.examples or 200, layers=layers, seed=args.seed
        )
    else:
        dataset = synth.make_needle_dataset(
            n_examples=args.examples or 300, layers=layers, seed=args.seed
        )
    paths = synth.write_dataset(dataset, args.out)
    print(f"wrote manifest + {len(paths)} container(s) under {args.out}")
    return EXIT_OK


_COMMANDS = {
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
    "evaluate": _cmd_evaluate,
    "baseline": _cmd_baseline,
    "plot": _cmd_plot,
    "validate": _cmd_validate,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (BioprobeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
