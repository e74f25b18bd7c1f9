"""Synthetic dataset generators used by tests and the demo pipeline.

Two families:

* ``separable``: two well-separated Gaussian clusters per frame, so the
  time-averaged pooled vectors are linearly separable by construction.
* ``needle``: the class signal lives in exactly one of ``frames_per_example``
  frames.  The needle frame carries a class-independent marker direction (so
  learned attention can find it) plus a class-signed payload direction; all
  other frames are noise.  Plain averaging dilutes the payload by the frame
  count, keeping the optimal time-averaged accuracy close to chance, while
  attention pooling can recover the needle frame.

Both generators assign splits 6:2:2 and can emit ``.prbe`` containers plus a
manifest, which is what the CLI fixture tool does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import (
    SINGLE_LABEL,
    DatasetManifest,
    ExampleRecord,
    FrameEmbeddingSequence,
    LabelSpace,
    save_manifest,
    write_container,
)


@dataclass(frozen=True)
class SyntheticDataset:
    manifest: DatasetManifest
    sequences_by_layer: dict[int, list[FrameEmbeddingSequence]]


def _assign_splits(n: int, rng: np.random.Generator) -> list[str]:
    """Shuffled 6:2:2 assignment over n examples."""
    n_train = round(n * 0.6)
    n_dev = round(n * 0.2)
    splits = ["train"] * n_train + ["dev"] * n_dev + ["test"] * (n - n_train - n_dev)
    order = rng.permutation(n)
    return [splits[i] for i in order]


def _to_dataset(name, labels, splits, by_layer, frame_stride_ms=20.0):
    label_space = LabelSpace(
        task_kind=SINGLE_LABEL,
        label_names=tuple(f"class_{i}" for i in range(max(labels) + 1)),
    )
    records = tuple(
        ExampleRecord(
            example_id=f"{name}_{i:04d}",
            labels=(int(label),),
            split=split,
            duration_s=max(len(by_layer[min(by_layer)][i]) * frame_stride_ms / 1000.0, 1e-3),
        )
        for i, (label, split) in enumerate(zip(labels, splits))
    )
    manifest = DatasetManifest(dataset_name=name, label_space=label_space, records=records)
    sequences = {
        layer: [
            FrameEmbeddingSequence(
                example_id=f"{name}_{i:04d}",
                layer=layer,
                frames=frames,
                frame_stride_ms=frame_stride_ms,
            )
            for i, frames in enumerate(mats)
        ]
        for layer, mats in by_layer.items()
    }
    return SyntheticDataset(manifest=manifest, sequences_by_layer=sequences)


def make_separable_dataset(
    n_examples: int = 200,
    d: int = 8,
    frames_per_example: int = 10,
    layers: tuple[int, ...] = (0,),
    cluster_distance: float = 8.0,
    noise_std: float = 0.25,
    seed: int = 0,
) -> SyntheticDataset:
    """Two Gaussian clusters, separable after time averaging."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    labels = [i % 2 for i in range(n_examples)]
    splits = _assign_splits(n_examples, rng)
    by_layer: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
    for layer_idx, layer in enumerate(layers):
        # deeper layers get progressively noisier copies, so sweeps have a best layer
        extra = noise_std * layer_idx * 2.0
        for label in labels:
            center = (1.0 if label == 1 else -1.0) * (cluster_distance / 2.0) * direction
            frames = center + rng.normal(
                scale=math.sqrt(noise_std**2 + extra**2) if extra else noise_std,
                size=(frames_per_example, d),
            )
            by_layer[layer].append(frames.astype(np.float32))
    return _to_dataset("separable", labels, splits, by_layer)


def make_needle_dataset(
    n_examples: int = 300,
    d: int = 8,
    frames_per_example: int = 50,
    payload: float = 2.0,
    marker: float = 8.0,
    noise_std: float = 1.0,
    layers: tuple[int, ...] = (0,),
    seed: int = 0,
) -> SyntheticDataset:
    """Class signal confined to one frame out of ``frames_per_example``.

    Needle frame = marker * e1 + (+-payload) * e0 (sign is the class); every
    other frame is N(0, noise_std^2) i.i.d.  See ``time_averaged_bayes_accuracy``
    for the optimal accuracy any classifier can reach on the averaged features.
    """
    rng = np.random.default_rng(seed)
    labels = [i % 2 for i in range(n_examples)]
    splits = _assign_splits(n_examples, rng)
    by_layer: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
    for layer in layers:
        for label in labels:
            frames = rng.normal(scale=noise_std, size=(frames_per_example, d))
            needle_at = int(rng.integers(frames_per_example))
            needle = np.zeros(d)
            needle[0] = payload if label == 1 else -payload
            needle[1] = marker
            frames[needle_at] = needle
            by_layer[layer].append(frames.astype(np.float32))
    return _to_dataset("needle", labels, splits, by_layer)


def time_averaged_bayes_accuracy(
    frames_per_example: int, payload: float, noise_std: float
) -> float:
    """Optimal accuracy of any classifier on the time-averaged needle features.

    After averaging, only the payload coordinate differs between classes:
    mean +-payload/T with Gaussian noise of std noise_std*sqrt(T-1)/T from
    the T-1 noise frames.  The optimal rule thresholds that coordinate at 0.
    """
    t = frames_per_example
    separation = payload / t
    sigma = noise_std * math.sqrt(t - 1) / t
    return 0.5 * (1.0 + math.erf(separation / (sigma * math.sqrt(2.0))))


def container_filename(dataset: str, layer: int) -> str:
    return f"{dataset}.layer{layer:02d}.prbe"


def write_dataset(dataset: SyntheticDataset, outdir) -> dict[int, Path]:
    """Write manifest + one container per layer; returns the container paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_manifest(dataset.manifest, outdir / "manifest.jsonl")
    paths = {}
    for layer, sequences in dataset.sequences_by_layer.items():
        path = outdir / container_filename(dataset.manifest.dataset_name, layer)
        write_container(sequences, path)
        paths[layer] = path
    return paths
