"""Experiment orchestration: layer x learning-rate sweeps, ablation curves,
CSV reports, and deterministic SVG plots.

A sweep trains one head per (layer, learning rate) cell, evaluates dev and
test, adds the random-baseline row, and flags the best cell by dev metric.
Completed cells are cached under a hash of the effective configuration plus
the container checksums, so interrupted sweeps resume without retraining.
Reports are plain CSV with a version line; identical config and seed produce
byte-identical reports.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics, sidecar
from .errors import DegenerateInputError, ValidationError
from .pooling import TIME_AVERAGED, TIME_WEIGHTED
from .probe import (
    DEFAULT_LEARNING_RATE_GRID,
    LabeledExample,
    TrainConfig,
    evaluate_probe,
    train_probe,
)
from .recurrent import ESNConfig, evaluate_bilstm, evaluate_esn, train_bilstm, train_esn
from .store import (
    MULTI_LABEL,
    SINGLE_LABEL,
    DatasetManifest,
    load_manifest,
    read_container,
)

HEAD_LINEAR_TA = "linear_TA"
HEAD_LINEAR_TWA = "linear_TWA"
HEAD_ESN = "esn"
HEAD_BILSTM = "bilstm"
HEAD_KINDS = (HEAD_LINEAR_TA, HEAD_LINEAR_TWA, HEAD_ESN, HEAD_BILSTM)

REPORT_SCHEMA = "bioprobe-report v1"
_CSV_COLUMNS = ("kind", "level", "layer", "learning_rate", "head", "dev_metric",
                "test_metric", "selected")


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: str
    containers: dict[int, str]
    head: str = HEAD_LINEAR_TA
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATE_GRID
    epochs: int = 100
    batch_size: int = 64
    weight_decay: float = 1e-4
    seed: int = 0
    output_dir: str = "runs"
    workers: int = 0
    reservoir_size: int = 128
    spectral_radius: float = 0.9
    input_scaling: float = 1.0
    leak_rate: float = 1.0
    ridge_lambda: float = 1e-3
    hidden_size: int = 256
    num_layers: int = 2
    bilstm_pool: str = "mean"

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ValidationError(f"unknown head {self.head!r}; choose from {HEAD_KINDS}")
        if not self.containers:
            raise ValidationError("at least one layer container is required")
        if not self.learning_rates:
            raise ValidationError("learning-rate grid must be nonempty")
        object.__setattr__(
            self, "containers", {int(k): str(v) for k, v in sorted(self.containers.items())}
        )
        object.__setattr__(self, "learning_rates", tuple(float(v) for v in self.learning_rates))

    @property
    def effective_rates(self) -> tuple[float, ...]:
        # the ESN readout is closed-form; the grid collapses to a single cell
        return (0.0,) if self.head == HEAD_ESN else self.learning_rates


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read the declarative JSON config; override values win over file values."""
    payload = json.loads(Path(path).read_text())
    if overrides:
        payload.update({k: v for k, v in overrides.items() if v is not None})
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(payload) - known - {"ablation"}
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    payload = {k: v for k, v in payload.items() if k in known}
    if "learning_rates" in payload:
        payload["learning_rates"] = tuple(payload["learning_rates"])
    if "containers" in payload:
        payload["containers"] = {int(k): v for k, v in payload["containers"].items()}
    return ExperimentConfig(**payload)


def _file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def config_hash(config: ExperimentConfig, checksums: dict[int, str]) -> str:
    """Identity of a sweep: every training-relevant knob plus data checksums."""
    payload = {
        "head": config.head,
        "learning_rates": list(config.effective_rates),
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "weight_decay": config.weight_decay,
        "seed": config.seed,
        "reservoir_size": config.reservoir_size,
        "spectral_radius": config.spectral_radius,
        "input_scaling": config.input_scaling,
        "leak_rate": config.leak_rate,
        "ridge_lambda": config.ridge_lambda,
        "hidden_size": config.hidden_size,
        "num_layers": config.num_layers,
        "bilstm_pool": config.bilstm_pool,
        "checksums": {str(k): v for k, v in sorted(checksums.items())},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def cell_seed(master_seed: int, layer: int, lr_index: int) -> int:
    """Stable per-cell seed so parallel order never changes results."""
    key = f"{master_seed}:{layer}:{lr_index}".encode()
    return zlib.crc32(key) ^ (master_seed & 0xFFFFFFFF)


def labeled_split(
    manifest: DatasetManifest, sequences, split: str
) -> list[LabeledExample]:
    """Pair each record of a split with its embedding sequence."""
    by_id = {seq.example_id: seq for seq in sequences}
    space = manifest.label_space
    examples = []
    for rec in manifest.records_for_split(split):
        seq = by_id.get(rec.example_id)
        if seq is None:
            raise ValidationError(f"no embedding for example {rec.example_id!r}")
        if space.task_kind == SINGLE_LABEL:
            target = rec.labels[0]
        else:
            target = np.zeros(space.num_labels, dtype=np.int64)
            target[list(rec.labels)] = 1
        examples.append(LabeledExample(seq=seq, target=target))
    if not examples:
        raise DegenerateInputError(f"split {split!r} is empty")
    return examples


@dataclass(frozen=True)
class ReportTable:
    """Sweep rows plus the random-baseline row; exactly one row is the best."""

    rows: tuple[metrics.SweepResult, ...]
    baseline: float
    best_index: int
    levels: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.rows:
            raise ValidationError("report table needs at least one row")
        if not (0 <= self.best_index < len(self.rows)):
            raise ValidationError("best_index out of range")
        if self.levels is not None and len(self.levels) != len(self.rows):
            raise ValidationError("levels must align with rows")

    @property
    def best(self) -> metrics.SweepResult:
        return self.rows[self.best_index]


def _format_float(value: float) -> str:
    return repr(float(value))


def report_to_csv(table: ReportTable) -> bytes:
    lines = [f"# {REPORT_SCHEMA}", ",".join(_CSV_COLUMNS)]
    for idx, row in enumerate(table.rows):
        level = "" if table.levels is None else _format_float(table.levels[idx])
        lines.append(
            ",".join(
                [
                    "cell",
                    level,
                    str(row.layer),
                    _format_float(row.learning_rate),
                    row.head,
                    _format_float(row.dev_metric),
                    _format_float(row.test_metric),
                    "1" if idx == table.best_index else "",
                ]
            )
        )
    lines.append(f"baseline,,,,,,{_format_float(table.baseline)},")
    return ("\n".join(lines) + "\n").encode()


def report_from_csv(data: bytes) -> ReportTable:
    lines = data.decode().splitlines()
    if not lines or lines[0] != f"# {REPORT_SCHEMA}":
        raise ValidationError(f"not a {REPORT_SCHEMA} report")
    if lines[1] != ",".join(_CSV_COLUMNS):
        raise ValidationError("unexpected report columns")
    rows = []
    levels = []
    baseline = None
    best_index = None
    for line in lines[2:]:
        if not line:
            continue
        parts = line.split(",")
        if parts[0] == "baseline":
            baseline = float(parts[6])
            continue
        kind, level, layer, lr, head, dev, test, selected = parts
        if selected == "1":
            best_index = len(rows)
        levels.append(float(level) if level else None)
        rows.append(
            metrics.SweepResult(
                layer=int(layer),
                learning_rate=float(lr),
                head=head,
                dev_metric=float(dev),
                test_metric=float(test),
            )
        )
    if baseline is None or best_index is None:
        raise ValidationError("report is missing the baseline or best row")
    has_levels = any(v is not None for v in levels)
    return ReportTable(
        rows=tuple(rows),
        baseline=baseline,
        best_index=best_index,
        levels=tuple(v if v is not None else 0.0 for v in levels) if has_levels else None,
    )


def _train_cell(config: ExperimentConfig, layer: int, lr_index: int,
                container_path: str, head_path: str) -> dict:
    """Train one sweep cell; runs in the parent or in a worker process."""
    manifest = load_manifest(config.manifest_path)
    sequences = read_container(container_path)
    train = labeled_split(manifest, sequences, "train")
    dev = labeled_split(manifest, sequences, "dev")
    test = labeled_split(manifest, sequences, "test")
    space = manifest.label_space
    lr = config.effective_rates[lr_index]
    seed = cell_seed(config.seed, layer, lr_index)

    if config.head in (HEAD_LINEAR_TA, HEAD_LINEAR_TWA):
        pooling = TIME_AVERAGED if config.head == HEAD_LINEAR_TA else TIME_WEIGHTED
        train_config = TrainConfig(
            learning_rate=lr,
            weight_decay=config.weight_decay,
            epochs=config.epochs,
            batch_size=config.batch_size,
            seed=seed,
            pooling=pooling,
        )
        trained, _curve = train_probe(train, dev, space, train_config)
        test_metric = evaluate_probe(test, trained.probe, trained.attention, space)
        sidecar.save_trained_probe(trained, head_path)
        dev_metric, best_epoch = trained.dev_metric, trained.best_epoch
    elif config.head == HEAD_ESN:
        esn_config = ESNConfig(
            reservoir_size=config.reservoir_size,
            spectral_radius=config.spectral_radius,
            input_scaling=config.input_scaling,
            leak_rate=config.leak_rate,
            ridge_lambda=config.ridge_lambda,
            seed=seed,
        )
        d = train[0].seq.frames.shape[1]
        trained = train_esn(train, dev, space, esn_config, d)
        test_metric = evaluate_esn(trained, test, space)
        sidecar.save_trained_esn(trained, head_path)
        dev_metric, best_epoch = trained.dev_metric, 0
    else:
        train_config = TrainConfig(
            learning_rate=lr,
            weight_decay=config.weight_decay,
            epochs=config.epochs,
            batch_size=config.batch_size,
            seed=seed,
        )
        trained, _curve = train_bilstm(
            train,
            dev,
            space,
            train_config,
            hidden_size=config.hidden_size,
            num_layers=config.num_layers,
            pool=config.bilstm_pool,
        )
        test_metric = evaluate_bilstm(trained, test, space)
        sidecar.save_trained_bilstm(trained, head_path)
        dev_metric, best_epoch = trained.dev_metric, trained.best_epoch

    return {
        "layer": layer,
        "lr_index": lr_index,
        "dev_metric": dev_metric,
        "test_metric": test_metric,
        "best_epoch": best_epoch,
    }


def run_sweep(config: ExperimentConfig) -> ReportTable:
    """Train every (layer, learning-rate) cell and write report + run manifest."""
    manifest = load_manifest(config.manifest_path)
    missing = [p for p in config.containers.values() if not Path(p).exists()]
    if missing:
        raise ValidationError(f"missing embedding containers: {missing}")
    checksums = {layer: _file_sha256(path) for layer, path in config.containers.items()}
    for path in config.containers.values():
        read_container(path)

    outdir = Path(config.output_dir)
    run_hash = config_hash(config, checksums)
    cache_dir = outdir / "cache" / run_hash
    heads_dir = outdir / "heads" / run_hash
    cache_dir.mkdir(parents=True, exist_ok=True)
    heads_dir.mkdir(parents=True, exist_ok=True)

    cells = [
        (layer, lr_index)
        for layer in config.containers
        for lr_index in range(len(config.effective_rates))
    ]
    results: dict[tuple[int, int], dict] = {}
    pending = []
    for layer, lr_index in cells:
        cache_file = cache_dir / f"L{layer}_lr{lr_index}.json"
        if cache_file.exists():
            results[(layer, lr_index)] = json.loads(cache_file.read_text())
        else:
            pending.append((layer, lr_index))

    workers = config.workers or os.cpu_count() or 1
    if pending:
        jobs = [
            (config, layer, lr_index, config.containers[layer],
             str(heads_dir / f"L{layer}_lr{lr_index}.prbs"))
            for layer, lr_index in pending
        ]
        if workers > 1 and len(pending) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_train_cell_star, jobs))
        else:
            outcomes = [_train_cell(*job) for job in jobs]
        for outcome in outcomes:
            key = (outcome["layer"], outcome["lr_index"])
            results[key] = outcome
            (cache_dir / f"L{key[0]}_lr{key[1]}.json").write_text(
                json.dumps(outcome, sort_keys=True)
            )

    rows = []
    for layer, lr_index in cells:
        outcome = results[(layer, lr_index)]
        rows.append(
            metrics.SweepResult(
                layer=layer,
                learning_rate=config.effective_rates[lr_index],
                head=config.head,
                dev_metric=outcome["dev_metric"],
                test_metric=outcome["test_metric"],
            )
        )
    best = metrics.select_best(rows)
    best_index = rows.index(best)

    space = manifest.label_space
    test_records = manifest.records_for_split("test")
    if space.task_kind == SINGLE_LABEL:
        targets = np.array([rec.labels[0] for rec in test_records], dtype=np.int64)
    else:
        targets = np.zeros((len(test_records), space.num_labels), dtype=np.int64)
        for i, rec in enumerate(test_records):
            targets[i, list(rec.labels)] = 1
    baseline = metrics.random_baseline(space, targets)

    table = ReportTable(rows=tuple(rows), baseline=baseline, best_index=best_index)
    (outdir / "report.csv").write_bytes(report_to_csv(table))
    run_manifest = {
        "schema": 1,
        "config_hash": run_hash,
        "seed": config.seed,
        "head": config.head,
        "learning_rates": list(config.effective_rates),
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "weight_decay": config.weight_decay,
        "manifest_path": str(config.manifest_path),
        "containers": {
            str(layer): {"path": str(path), "sha256": checksums[layer]}
            for layer, path in config.containers.items()
        },
    }
    (outdir / "run_manifest.json").write_text(
        json.dumps(run_manifest, indent=2, sort_keys=True) + "\n"
    )
    return table


def _train_cell_star(job):
    return _train_cell(*job)


def run_ablation(
    config: ExperimentConfig,
    transform: str,
    levels: dict[float, str],
    extractor_model: str = "<model>",
) -> ReportTable:
    """One metric per ablation level at a fixed layer (the config's only layer).

    ``levels`` maps the transform value (SNR in dB, or pitch factor) to the
    container of embeddings re-extracted from the transformed audio.
    """
    if transform not in ("noise", "pitch"):
        raise ValidationError(f"unknown transform {transform!r}")
    if not levels:
        raise ValidationError("no ablation levels given")
    if len(config.containers) != 1:
        raise ValidationError("ablation runs at a single fixed layer")
    layer = next(iter(config.containers))

    missing = {value: path for value, path in levels.items() if not Path(path).exists()}
    if missing:
        detail = ", ".join(f"{transform}={value}" for value in sorted(missing))
        raise ValidationError(
            f"missing ablated containers for {detail}; extract them with "
            f"`prbe-extract extract --model {extractor_model} --layers {layer} "
            f"--out <dir>` on audio transformed at those levels"
        )

    rows = []
    level_values = []
    for value in sorted(levels):
        level_config = replace(
            config,
            containers={layer: levels[value]},
            output_dir=str(Path(config.output_dir) / f"{transform}_{value:g}"),
        )
        table = run_sweep(level_config)
        rows.append(table.best)
        level_values.append(float(value))

    manifest = load_manifest(config.manifest_path)
    space = manifest.label_space
    test_records = manifest.records_for_split("test")
    if space.task_kind == SINGLE_LABEL:
        targets = np.array([rec.labels[0] for rec in test_records], dtype=np.int64)
    else:
        targets = np.zeros((len(test_records), space.num_labels), dtype=np.int64)
        for i, rec in enumerate(test_records):
            targets[i, list(rec.labels)] = 1

    table = ReportTable(
        rows=tuple(rows),
        baseline=metrics.random_baseline(space, targets),
        best_index=int(np.argmax([r.dev_metric for r in rows])),
        levels=tuple(level_values),
    )
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"ablation_{transform}.csv").write_bytes(report_to_csv(table))
    emit_plot(
        list(zip(level_values, [r.test_metric for r in rows])),
        x_label=f"{transform} level",
        y_label="test metric",
        path=outdir / f"ablation_{transform}.svg",
    )
    return table


# ---------------------------------------------------------------------------
# Deterministic SVG plots
# ---------------------------------------------------------------------------

_CANVAS_W = 640
_CANVAS_H = 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 24, 32, 56


def emit_plot(series: list[tuple[float, float]], x_label: str, y_label: str, path) -> bytes:
    """Standalone SVG line chart; identical input gives identical bytes.

    The y axis is fixed to [0, 1] with ticks every 0.25 (metrics are
    bounded); the x axis spans the data.
    """
    if not series:
        raise DegenerateInputError("nothing to plot")
    xs = [float(x) for x, _ in series]
    ys = [float(y) for _, y in series]
    x_min, x_max = min(xs), max(xs)
    if x_min == x_max:
        x_min, x_max = x_min - 0.5, x_max + 0.5
    plot_w = _CANVAS_W - _MARGIN_L - _MARGIN_R
    plot_h = _CANVAS_H - _MARGIN_T - _MARGIN_B

    def sx(x):
        return _MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y):
        return _MARGIN_T + (1.0 - y) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS_W}" '
        f'height="{_CANVAS_H}" viewBox="0 0 {_CANVAS_W} {_CANVAS_H}">',
        f'<rect width="{_CANVAS_W}" height="{_CANVAS_H}" fill="white"/>',
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{_CANVAS_H - _MARGIN_B}" stroke="black"/>',
        f'<line x1="{_MARGIN_L}" y1="{_CANVAS_H - _MARGIN_B}" '
        f'x2="{_CANVAS_W - _MARGIN_R}" y2="{_CANVAS_H - _MARGIN_B}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(tick)
        parts.append(
            f'<line x1="{_MARGIN_L - 4}" y1="{y:.2f}" x2="{_MARGIN_L}" '
            f'y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end" font-family="sans-serif">{tick:g}</text>'
        )
    for x in sorted(set(xs)):
        px = sx(x)
        parts.append(
            f'<line x1="{px:.2f}" y1="{_CANVAS_H - _MARGIN_B}" x2="{px:.2f}" '
            f'y2="{_CANVAS_H - _MARGIN_B + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{_CANVAS_H - _MARGIN_B + 18}" font-size="12" '
            f'text-anchor="middle" font-family="sans-serif">{x:g}</text>'
        )
    points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>'
    )
    for x, y in zip(xs, ys):
        parts.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="steelblue"/>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.2f}" y="{_CANVAS_H - 12}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_T + plot_h / 2:.2f}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif" '
        f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.2f})">{y_label}</text>'
    )
    parts.append("</svg>")
    payload = ("\n".join(parts) + "\n").encode()
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


def layer_series(table: ReportTable) -> list[tuple[float, float]]:
    """Best test metric per layer, for metric-vs-layer plots."""
    per_layer: dict[int, metrics.SweepResult] = {}
    for row in table.rows:
        current = per_layer.get(row.layer)
        if current is None or (row.dev_metric, -row.learning_rate) > (
            current.dev_metric,
            -current.learning_rate,
        ):
            per_layer[row.layer] = row
    return [(float(layer), per_layer[layer].test_metric) for layer in sorted(per_layer)]
