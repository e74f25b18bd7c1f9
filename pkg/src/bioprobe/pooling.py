"""Pooling of frame-embedding sequences into fixed-size vectors.

Two strategies: plain time averaging, and a learnable time-weighted average
where each frame gets a scalar score from a shared linear map, the scores are
softmax-normalized over time, and the frames are combined with those weights.
The weighted variant adds exactly d+1 trainable parameters regardless of the
sequence length.

All arithmetic runs in float64 even though containers store float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError

TIME_AVERAGED = "time_averaged"
TIME_WEIGHTED = "time_weighted"


@dataclass(frozen=True, eq=False)
class AttentionPoolParams:
    """Per-frame scoring parameters: a d-vector and a scalar bias."""

    w_alpha: np.ndarray
    b_alpha: float

    def __post_init__(self):
        w = np.ascontiguousarray(self.w_alpha, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise DimensionMismatchError(f"w_alpha must be a 1-D vector, got shape {w.shape}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b_alpha)):
            raise DegenerateInputError("attention parameters must be finite")
        object.__setattr__(self, "w_alpha", w)
        object.__setattr__(self, "b_alpha", float(self.b_alpha))

    @classmethod
    def zeros(cls, d: int) -> "AttentionPoolParams":
        return cls(w_alpha=np.zeros(d), b_alpha=0.0)

    @property
    def param_count(self) -> int:
        return self.w_alpha.size + 1


@dataclass(frozen=True, eq=False)
class PooledVector:
    values: np.ndarray
    source: str

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DegenerateInputError("pooled vector has non-finite values")
        object.__setattr__(self, "values", v)


def _frames(seq) -> np.ndarray:
    """Accept a FrameEmbeddingSequence or a raw T x d array."""
    frames = getattr(seq, "frames", seq)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DimensionMismatchError(f"expected a T x d matrix, got shape {frames.shape}")
    if frames.shape[0] < 1:
        raise DegenerateInputError("empty frame sequence")
    return frames


def time_average(seq) -> PooledVector:
    """Unweighted mean of frame embeddings over time."""
    frames = _frames(seq)
    return PooledVector(values=frames.mean(axis=0), source=TIME_AVERAGED)


def attention_scores(seq, params: AttentionPoolParams) -> np.ndarray:
    """Raw per-frame scores: dot product with the score vector plus bias."""
    frames = _frames(seq)
    if frames.shape[1] != params.w_alpha.size:
        raise DimensionMismatchError(
            f"frame width {frames.shape[1]} != score vector width {params.w_alpha.size}"
        )
    return frames @ params.w_alpha + params.b_alpha


def softmax_over_time(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the time axis of a score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise DegenerateInputError(f"scores must be a nonempty vector, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise DegenerateInputError("non-finite attention scores")
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def time_weighted_average(seq, params: AttentionPoolParams) -> PooledVector:
    """Softmax-weighted mean of frames using the learned per-frame scores."""
    frames = _frames(seq)
    weights = softmax_over_time(attention_scores(frames, params))
    return PooledVector(values=weights @ frames, source=TIME_WEIGHTED)


def pool(seq, mode: str, params: AttentionPoolParams | None = None) -> PooledVector:
    """Dispatch on the pooling mode; the weighted mode requires params."""
    if mode == TIME_AVERAGED:
        return time_average(seq)
    if mode == TIME_WEIGHTED:
        if params is None:
            raise DimensionMismatchError("time_weighted pooling needs AttentionPoolParams")
        return time_weighted_average(seq, params)
    raise DegenerateInputError(f"unknown pooling mode {mode!r}")
