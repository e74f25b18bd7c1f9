"""On-disk container for per-layer frame embeddings, plus the dataset manifest.

Container layout (all integers little-endian uint32, floats little-endian
float32):

    magic "PRBE" | version | d | frame_stride_us | layer | count
    then per example: id_len | id (UTF-8) | T | T*d floats

One container holds one encoder layer for one dataset; the embedding width
``d`` and the frame stride are constant within a file.  Containers are
immutable once written, so concurrent readers need no locking.

The manifest is line-delimited JSON, one record per line with fields ``id``,
``labels`` (list of label indices), ``split`` and ``duration_s``.  The label
space lives in a sibling file ``<stem>.labels.json`` with ``task_kind`` and
``label_names`` (and an optional ``dataset_name``).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DimensionMismatchError,
    FormatError,
    ValidationError,
    VersionError,
)

log = logging.getLogger(__name__)

MAGIC = b"PRBE"
FORMAT_VERSION = 1

SPLIT_NAMES = ("train", "dev", "test")

SINGLE_LABEL = "single_label_classification"
MULTI_LABEL = "multi_label_detection"
TASK_KINDS = (SINGLE_LABEL, MULTI_LABEL)

_HEADER = struct.Struct("<4s5I")
_U32 = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class FrameEmbeddingSequence:
    """One example's T-by-d matrix of frame embeddings for one encoder layer."""

    example_id: str
    layer: int
    frames: np.ndarray
    frame_stride_ms: float = 20.0

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(
                f"frames must be a T x d matrix with T,d >= 1, got shape {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValidationError(f"non-finite frame values in {self.example_id!r}")
        if self.layer < 0:
            raise ValidationError(f"layer must be non-negative, got {self.layer}")
        if not (self.frame_stride_ms > 0):
            raise ValidationError(f"frame_stride_ms must be positive, got {self.frame_stride_ms}")
        # stride is stored as integer microseconds; reject values that would drift
        us = self.frame_stride_ms * 1000.0
        if abs(us - round(us)) > 1e-6:
            raise ValidationError(
                f"frame_stride_ms must be a whole number of microseconds, got {self.frame_stride_ms}"
            )
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def same_as(self, other: "FrameEmbeddingSequence") -> bool:
        """Bit-level equality, used by roundtrip checks."""
        return (
            self.example_id == other.example_id
            and self.layer == other.layer
            and self.frame_stride_ms == other.frame_stride_ms
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )


@dataclass(frozen=True)
class ExampleRecord:
    example_id: str
    labels: tuple[int, ...]
    split: str
    duration_s: float

    def __post_init__(self):
        if self.split not in SPLIT_NAMES:
            raise ValidationError(f"unknown split {self.split!r} for {self.example_id!r}")
        if not (self.duration_s > 0):
            raise ValidationError(f"duration_s must be positive for {self.example_id!r}")
        labels = tuple(sorted(set(int(x) for x in self.labels)))
        if any(x < 0 for x in labels):
            raise ValidationError(f"negative label index for {self.example_id!r}")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class LabelSpace:
    task_kind: str
    label_names: tuple[str, ...]

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValidationError(f"unknown task_kind {self.task_kind!r}")
        names = tuple(str(n) for n in self.label_names)
        if self.task_kind == SINGLE_LABEL and len(names) < 2:
            raise ValidationError("classification needs at least 2 labels")
        if len(names) < 1:
            raise ValidationError("label space is empty")
        object.__setattr__(self, "label_names", names)

    @property
    def num_labels(self) -> int:
        return len(self.label_names)


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    label_space: LabelSpace
    records: tuple[ExampleRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("manifest has no records")
        seen = set()
        for rec in records:
            if rec.example_id in seen:
                raise ValidationError(f"duplicate example_id {rec.example_id!r}")
            seen.add(rec.example_id)
            if rec.labels and max(rec.labels) >= self.label_space.num_labels:
                raise ValidationError(
                    f"label index out of range for {rec.example_id!r}: "
                    f"{max(rec.labels)} >= {self.label_space.num_labels}"
                )
            if self.label_space.task_kind == SINGLE_LABEL and len(rec.labels) != 1:
                raise ValidationError(
                    f"single-label task but {rec.example_id!r} has {len(rec.labels)} labels"
                )
        object.__setattr__(self, "records", records)

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLIT_NAMES}
        for rec in self.records:
            counts[rec.split] += 1
        return counts

    def split_ratio(self) -> str:
        """Counts normalized to parts of ten, e.g. a 6:2:2 split."""
        counts = self.split_counts()
        total = len(self.records)
        return ":".join(f"{counts[s] / total * 10:g}" for s in SPLIT_NAMES)

    def records_for_split(self, split: str) -> tuple[ExampleRecord, ...]:
        if split not in SPLIT_NAMES:
            raise ValidationError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)


def write_container(sequences: list[FrameEmbeddingSequence], path) -> None:
    """Write sequences to a ``.prbe`` container.

    All sequences must share the embedding width, layer and frame stride.
    An empty list produces a valid container with count 0.
    """
    path = Path(path)
    if sequences:
        first = sequences[0]
        d = first.dim
        layer = first.layer
        stride_us = round(first.frame_stride_ms * 1000.0)
        for seq in sequences:
            if seq.dim != d:
                raise DimensionMismatchError(
                    f"inconsistent embedding width: {seq.dim} != {d} ({seq.example_id!r})"
                )
            if seq.layer != layer or round(seq.frame_stride_ms * 1000.0) != stride_us:
                raise ValidationError(
                    f"sequence {seq.example_id!r} does not share the container's layer/stride"
                )
    else:
        d, layer, stride_us = 0, 0, 0

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, stride_us, layer, len(sequences)))
        for seq in sequences:
            ident = seq.example_id.encode("utf-8")
            fh.write(_U32.pack(len(ident)))
            fh.write(ident)
            fh.write(_U32.pack(seq.num_frames))
            fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def read_container(path) -> list[FrameEmbeddingSequence]:
    """Read a ``.prbe`` container back into sequences, validating as it goes."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: shorter than the fixed header")
    magic, version, d, stride_us, layer, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")

    offset = _HEADER.size
    sequences: list[FrameEmbeddingSequence] = []
    for i in range(count):
        if offset + 4 > len(data):
            raise CorruptionError(f"{path}: truncated before example {i}")
        (id_len,) = _U32.unpack_from(data, offset)
        offset += 4
        if offset + id_len + 4 > len(data):
            raise CorruptionError(f"{path}: truncated inside example {i}")
        example_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (num_frames,) = _U32.unpack_from(data, offset)
        offset += 4
        payload = num_frames * d * 4
        if num_frames < 1 or d < 1:
            raise CorruptionError(f"{path}: example {example_id!r} declares an empty matrix")
        if offset + payload > len(data):
            raise CorruptionError(f"{path}: truncated matrix for {example_id!r}")
        frames = np.frombuffer(data, dtype="<f4", count=num_frames * d, offset=offset)
        offset += payload
        frames = frames.reshape(num_frames, d)
        if not np.all(np.isfinite(frames)):
            raise CorruptionError(f"{path}: non-finite values for {example_id!r}")
        sequences.append(
            FrameEmbeddingSequence(
                example_id=example_id,
                layer=layer,
                frames=frames.copy(),
                frame_stride_ms=stride_us / 1000.0,
            )
        )
    if offset != len(data):
        raise CorruptionError(f"{path}: {len(data) - offset} trailing bytes after {count} examples")
    return sequences


def label_space_path(manifest_path) -> Path:
    """Sibling header file carrying the label space for a manifest."""
    p = Path(manifest_path)
    return p.with_name(p.stem + ".labels.json")


def save_label_space(space: LabelSpace, path, dataset_name: str | None = None) -> None:
    payload = {"task_kind": space.task_kind, "label_names": list(space.label_names)}
    if dataset_name is not None:
        payload["dataset_name"] = dataset_name
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_label_space(path) -> tuple[LabelSpace, str | None]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid label-space file: {exc}") from exc
    try:
        space = LabelSpace(
            task_kind=payload["task_kind"], label_names=tuple(payload["label_names"])
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: missing label-space field {exc}") from exc
    return space, payload.get("dataset_name")


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest as JSON lines plus its sibling label-space file."""
    path = Path(path)
    with open(path, "w") as fh:
        for rec in manifest.records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.example_id,
                        "labels": list(rec.labels),
                        "split": rec.split,
                        "duration_s": rec.duration_s,
                    }
                )
                + "\n"
            )
    save_label_space(manifest.label_space, label_space_path(path), manifest.dataset_name)


def load_manifest(path) -> DatasetManifest:
    """Load and validate a JSON-lines manifest; logs the split ratio."""
    path = Path(path)
    space, dataset_name = load_label_space(label_space_path(path))
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid record: {exc}") from exc
            try:
                records.append(
                    ExampleRecord(
                        example_id=str(payload["id"]),
                        labels=tuple(payload["labels"]),
                        split=str(payload["split"]),
                        duration_s=float(payload["duration_s"]),
                    )
                )
            except KeyError as exc:
                raise ValidationError(f"{path}:{lineno}: missing field {exc}") from exc
    manifest = DatasetManifest(
        dataset_name=dataset_name or path.stem,
        label_space=space,
        records=tuple(records),
    )
    counts = manifest.split_counts()
    log.info(
        "loaded %s: %d records, splits train/dev/test = %d/%d/%d (ratio %s)",
        manifest.dataset_name,
        len(manifest.records),
        counts["train"],
        counts["dev"],
        counts["test"],
        manifest.split_ratio(),
    )
    return manifest
