"""Extraction jobs: run a frozen encoder over WAV inputs and emit one
``.prbe`` container per requested layer plus a run manifest."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import write_container
from .models import ENCODER_RATE_HZ, FRAME_STRIDE_US, SpeechEncoder
from .wavio import ensure_rate, load_wav

log = logging.getLogger(__name__)


@dataclass
class ExtractorJob:
    model_id: str
    layers: list[int]
    audio_paths: list[str]
    output_dir: str
    random_init: bool = False
    seed: int = 0
    chunk_s: float = 30.0
    overlap_s: float = 1.0
    dataset_name: str = "dataset"


@dataclass
class ExtractResult:
    containers: dict[int, Path]
    manifest_path: Path
    dim: int
    frame_counts: dict[str, int] = field(default_factory=dict)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def extract(job: ExtractorJob) -> ExtractResult:
    """Run the encoder over every input and write per-layer containers."""
    if not job.audio_paths:
        raise ValueError("no audio inputs")
    encoder = SpeechEncoder.load(job.model_id, random_init=job.random_init, seed=job.seed)
    layers = sorted(set(job.layers))
    encoder.validate_layers(layers)

    outdir = Path(job.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    per_layer: dict[int, list[tuple[str, np.ndarray]]] = {layer: [] for layer in layers}
    frame_counts: dict[str, int] = {}
    for raw_path in job.audio_paths:
        path = Path(raw_path)
        samples, rate = load_wav(path)
        samples = ensure_rate(samples, rate, ENCODER_RATE_HZ, name=path.name)
        embedded = encoder.embed_chunked(samples, layers, job.chunk_s, job.overlap_s)
        example_id = path.stem
        frame_counts[example_id] = embedded[layers[0]].shape[0]
        for layer in layers:
            per_layer[layer].append((example_id, embedded[layer]))

    containers: dict[int, Path] = {}
    for layer in layers:
        target = outdir / f"{job.dataset_name}.layer{layer:02d}.prbe"
        write_container(target, per_layer[layer], layer=layer, frame_stride_us=FRAME_STRIDE_US)
        containers[layer] = target

    manifest = {
        "schema": 1,
        "model": job.model_id,
        "random_init": job.random_init,
        "seed": job.seed,
        "hidden_size": encoder.hidden_size,
        "frame_stride_us": FRAME_STRIDE_US,
        "layer_tensor_source": "hidden_states[i]; 0 = conv projection, i>=1 = transformer layer i",
        "chunk_s": job.chunk_s,
        "overlap_s": job.overlap_s,
        "examples": frame_counts,
        "containers": {
            str(layer): {"path": str(p), "sha256": _sha256(p)} for layer, p in containers.items()
        },
    }
    manifest_path = outdir / "extraction_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d containers to %s", len(containers), outdir)
    return ExtractResult(
        containers=containers,
        manifest_path=manifest_path,
        dim=encoder.hidden_size,
        frame_counts=frame_counts,
    )
