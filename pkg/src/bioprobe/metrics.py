"""Evaluation metrics, random baselines, and sweep-cell selection.

Accuracy covers single-label classification; macro mean average precision
covers multi-label detection.  AP is the non-interpolated, rank-based
variant: sort by descending score (stable, ties broken by original index)
and average the precision at each positive rank.  Classes without positives
are excluded from the macro mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, ValidationError
from .store import MULTI_LABEL, SINGLE_LABEL, LabelSpace


@dataclass(frozen=True, eq=False)
class PredictionBatch:
    """Scores for M examples over C classes, plus targets.

    Classification targets are M label indices; detection targets are an
    M x C binary matrix.
    """

    scores: np.ndarray
    targets: np.ndarray
    task_kind: str

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise DimensionMismatchError(f"scores must be M x C, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise DegenerateInputError("non-finite scores")
        m, c = scores.shape
        if self.task_kind == SINGLE_LABEL:
            targets = np.asarray(self.targets, dtype=np.int64)
            if targets.shape != (m,):
                raise DimensionMismatchError(
                    f"classification targets must have shape ({m},), got {targets.shape}"
                )
            if m and (targets.min() < 0 or targets.max() >= c):
                raise ValidationError("target label index out of range")
        elif self.task_kind == MULTI_LABEL:
            targets = np.asarray(self.targets)
            if targets.shape != (m, c):
                raise DimensionMismatchError(
                    f"detection targets must have shape ({m}, {c}), got {targets.shape}"
                )
            if not np.all((targets == 0) | (targets == 1)):
                raise ValidationError("detection targets must be binary")
            targets = targets.astype(np.int64)
        else:
            raise ValidationError(f"unknown task_kind {self.task_kind!r}")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "targets", targets)

    @property
    def num_examples(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class SweepResult:
    """Dev/test metrics for one (layer, learning rate) cell of a sweep."""

    layer: int
    learning_rate: float
    head: str
    dev_metric: float
    test_metric: float

    def __post_init__(self):
        for name, value in (("dev_metric", self.dev_metric), ("test_metric", self.test_metric)):
            if not (0.0 <= value <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")


def accuracy(batch: PredictionBatch) -> float:
    """Fraction of rows whose argmax equals the target (ties to lowest index)."""
    if batch.task_kind != SINGLE_LABEL:
        raise ValidationError("accuracy requires a classification batch")
    if batch.num_examples == 0:
        raise DegenerateInputError("empty prediction batch")
    predicted = np.argmax(batch.scores, axis=1)
    return float(np.mean(predicted == batch.targets))


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-based AP for one class; requires at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives)
    if scores.ndim != 1 or scores.shape != positives.shape:
        raise DimensionMismatchError("scores and positives must be equal-length vectors")
    if not np.all((positives == 0) | (positives == 1)):
        raise ValidationError("positives must be binary")
    total = int(positives.sum())
    if total == 0:
        raise DegenerateInputError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    ranked = positives[order].astype(np.float64)
    hits = np.cumsum(ranked)
    precision = hits / np.arange(1, scores.size + 1)
    return float(precision[ranked == 1].mean())


def mean_average_precision(batch: PredictionBatch) -> float:
    """Macro mean of per-class AP over classes with at least one positive."""
    if batch.task_kind != MULTI_LABEL:
        raise ValidationError("mAP requires a detection batch")
    if batch.num_examples == 0:
        raise DegenerateInputError("empty prediction batch")
    per_class = []
    for c in range(batch.num_classes):
        if batch.targets[:, c].sum() == 0:
            continue
        per_class.append(average_precision(batch.scores[:, c], batch.targets[:, c]))
    if not per_class:
        raise DegenerateInputError("no class has a positive target")
    return float(np.mean(per_class))


def evaluate(batch: PredictionBatch) -> float:
    """Task-appropriate metric: accuracy or macro mAP."""
    if batch.task_kind == SINGLE_LABEL:
        return accuracy(batch)
    return mean_average_precision(batch)


def random_baseline(label_space: LabelSpace, targets: np.ndarray) -> float:
    """Chance-level score on the given test targets.

    Classification: the larger of majority-class frequency and uniform 1/C.
    Detection: the mAP of constant scores against the targets.
    """
    targets = np.asarray(targets)
    if targets.size == 0:
        raise DegenerateInputError("empty targets")
    if label_space.task_kind == SINGLE_LABEL:
        counts = np.bincount(targets.astype(np.int64), minlength=label_space.num_labels)
        majority = counts.max() / targets.size
        return float(max(majority, 1.0 / label_space.num_labels))
    batch = PredictionBatch(
        scores=np.zeros(targets.shape, dtype=np.float64),
        targets=targets,
        task_kind=MULTI_LABEL,
    )
    return mean_average_precision(batch)


def select_best(results: list[SweepResult]) -> SweepResult:
    """Highest dev metric; ties broken by lower layer, then lower learning rate."""
    if not results:
        raise DegenerateInputError("no sweep results to select from")
    return min(results, key=lambda r: (-r.dev_metric, r.layer, r.learning_rate))
