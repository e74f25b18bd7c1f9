"""Linear probe head: losses, analytic gradients, Adam, and the training loop.

The probe is a single linear layer on a pooled embedding.  With time-weighted
pooling the attention parameters and the probe are trained jointly on one
loss, so the backward pass chains through the softmax pooling.  Training runs
for a fixed number of epochs with a seeded shuffle and returns the parameter
snapshot from the best dev epoch (earlier epoch wins ties).

Weight decay is decoupled: weight matrices (and the attention score vector)
shrink multiplicatively before the Adam delta; biases are never decayed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DivergenceError,
    ValidationError,
)
from .pooling import (
    TIME_AVERAGED,
    TIME_WEIGHTED,
    AttentionPoolParams,
    PooledVector,
    _frames,
    attention_scores,
    softmax_over_time,
)
from .store import MULTI_LABEL, SINGLE_LABEL, LabelSpace

DEFAULT_LEARNING_RATE_GRID = (1e-5, 5e-5, 1e-4)


@dataclass(frozen=True, eq=False)
class LinearProbeParams:
    """Weights of the linear head: a C x d matrix and a C-vector bias."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
            raise DimensionMismatchError(f"bad probe shapes W={W.shape}, b={b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise DegenerateInputError("non-finite probe parameters")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    pooling: str = TIME_AVERAGED

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.pooling not in (TIME_AVERAGED, TIME_WEIGHTED):
            raise ValidationError(f"unknown pooling {self.pooling!r}")


@dataclass
class AdamState:
    """First and second moment estimates per named parameter tensor."""

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    decay_keys: frozenset[str]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], decay_keys=()) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            decay_keys=frozenset(decay_keys),
        )


@dataclass(frozen=True)
class TrainedProbe:
    probe: LinearProbeParams
    attention: AttentionPoolParams | None
    best_epoch: int
    dev_metric: float


@dataclass(frozen=True, eq=False)
class ProbeGrads:
    W: np.ndarray
    b: np.ndarray
    w_alpha: np.ndarray | None = None
    b_alpha: float | None = None


@dataclass(frozen=True, eq=False)
class LabeledExample:
    """A frame sequence paired with its training target.

    Classification targets are a single label index; detection targets are a
    C-vector of {0, 1}.
    """

    seq: object
    target: object


def linear_forward(x, params: LinearProbeParams) -> np.ndarray:
    """Logits of the linear head: W x + b."""
    values = x.values if isinstance(x, PooledVector) else np.asarray(x, dtype=np.float64)
    if values.shape != (params.dim,):
        raise DimensionMismatchError(
            f"pooled vector has shape {values.shape}, probe expects ({params.dim},)"
        )
    return params.W @ values + params.b


def cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Softmax cross entropy; returns the loss and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.size
    if c < 2:
        raise ValidationError("cross entropy needs at least 2 classes")
    if not (0 <= target < c):
        raise ValidationError(f"target {target} out of range for {c} classes")
    shifted = logits - logits.max()
    log_norm = math.log(np.exp(shifted).sum())
    loss = log_norm - shifted[target]
    grad = np.exp(shifted - log_norm)
    grad[target] -= 1.0
    return float(loss), grad


def binary_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-class BCE with logits, in the overflow-safe form.

    loss_c = max(z, 0) - z*y + log(1 + exp(-|z|)), averaged over classes;
    gradient is (sigmoid(z) - y) / C.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise DimensionMismatchError(
            f"logits shape {logits.shape} != targets shape {targets.shape}"
        )
    if not np.all((targets == 0) | (targets == 1)):
        raise ValidationError("BCE targets must be 0 or 1")
    c = logits.size
    per_class = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    sigma = np.empty_like(logits)
    pos = logits >= 0
    sigma[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    expz = np.exp(logits[~pos])
    sigma[~pos] = expz / (1.0 + expz)
    return float(per_class.mean()), (sigma - targets) / c


def backward_pooled(
    seq,
    probe: LinearProbeParams,
    loss_grad: np.ndarray,
    attention: AttentionPoolParams | None = None,
) -> ProbeGrads:
    """Analytic gradients of the loss w.r.t. probe (and attention) parameters.

    With attention present, the pooled vector is the softmax-weighted frame
    average; the chain rule runs through the softmax Jacobian, with
    d(score_t)/d(w_alpha) = x_t and d(score_t)/d(b_alpha) = 1.
    """
    frames = _frames(seq)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (probe.num_classes,):
        raise DimensionMismatchError(
            f"loss gradient shape {loss_grad.shape} != ({probe.num_classes},)"
        )
    if frames.shape[1] != probe.dim:
        raise DimensionMismatchError(f"frame width {frames.shape[1]} != probe dim {probe.dim}")

    if attention is None:
        pooled = frames.mean(axis=0)
        return ProbeGrads(W=np.outer(loss_grad, pooled), b=loss_grad.copy())

    weights = softmax_over_time(attention_scores(frames, attention))
    pooled = weights @ frames
    d_pooled = probe.W.T @ loss_grad
    d_weights = frames @ d_pooled
    # softmax Jacobian: d(score_t) = w_t * (d(weight_t) - sum_s w_s d(weight_s))
    d_scores = weights * (d_weights - float(weights @ d_weights))
    return ProbeGrads(
        W=np.outer(loss_grad, pooled),
        b=loss_grad.copy(),
        w_alpha=frames.T @ d_scores,
        b_alpha=float(d_scores.sum()),
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    weight_decay: float = 0.0,
) -> None:
    """One in-place Adam update with bias correction and decoupled decay.

    Decay applies only to tensors named in ``state.decay_keys`` and happens
    before the Adam delta.
    """
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    # divergent configs overflow to inf here and are caught by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        for key, p in params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise DimensionMismatchError(f"gradient shape mismatch for {key!r}")
            if weight_decay > 0.0 and key in state.decay_keys:
                p -= learning_rate * weight_decay * p
            m = state.first_moment[key]
            v = state.second_moment[key]
            m += (1.0 - state.beta1) * (g - m)
            v += (1.0 - state.beta2) * (g * g - v)
            p -= learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


def _loss_and_grads(example: LabeledExample, probe, attention, task_kind):
    frames = _frames(example.seq)
    if attention is None:
        pooled = frames.mean(axis=0)
    else:
        weights = softmax_over_time(attention_scores(frames, attention))
        pooled = weights @ frames
    logits = probe.W @ pooled + probe.b
    if task_kind == SINGLE_LABEL:
        loss, grad = cross_entropy(logits, int(example.target))
    else:
        loss, grad = binary_cross_entropy(logits, np.asarray(example.target))
    return loss, backward_pooled(frames, probe, grad, attention)


def predict_scores(
    examples,
    probe: LinearProbeParams,
    attention: AttentionPoolParams | None,
) -> np.ndarray:
    """Logit matrix for a list of sequences or labeled examples."""
    rows = []
    for ex in examples:
        seq = ex.seq if isinstance(ex, LabeledExample) else ex
        frames = _frames(seq)
        if attention is None:
            pooled = frames.mean(axis=0)
        else:
            weights = softmax_over_time(attention_scores(frames, attention))
            pooled = weights @ frames
        rows.append(probe.W @ pooled + probe.b)
    return np.array(rows)


def _targets_array(examples, task_kind) -> np.ndarray:
    if task_kind == SINGLE_LABEL:
        return np.array([int(ex.target) for ex in examples], dtype=np.int64)
    return np.array([np.asarray(ex.target, dtype=np.int64) for ex in examples])


def evaluate_probe(examples, probe, attention, label_space: LabelSpace) -> float:
    batch = metrics.PredictionBatch(
        scores=predict_scores(examples, probe, attention),
        targets=_targets_array(examples, label_space.task_kind),
        task_kind=label_space.task_kind,
    )
    return metrics.evaluate(batch)


def init_probe_params(d: int, c: int, pooling: str, seed: int):
    """Seeded init: uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)
    params = {
        "W": rng.uniform(-bound, bound, size=(c, d)),
        "b": np.zeros(c),
    }
    if pooling == TIME_WEIGHTED:
        params["w_alpha"] = rng.uniform(-bound, bound, size=d)
        params["b_alpha"] = np.zeros(1)
    return params


def train_probe(
    train: list[LabeledExample],
    dev: list[LabeledExample],
    label_space: LabelSpace,
    config: TrainConfig,
) -> tuple[TrainedProbe, list[float]]:
    """Full training loop; returns the best-dev-epoch probe and the dev curve."""
    if not train or not dev:
        raise DegenerateInputError("train and dev splits must be nonempty")
    d = _frames(train[0].seq).shape[1]
    c = label_space.num_labels
    task_kind = label_space.task_kind
    if task_kind == MULTI_LABEL:
        for ex in train:
            if np.asarray(ex.target).shape != (c,):
                raise DimensionMismatchError("detection targets must be C-vectors")

    params = init_probe_params(d, c, config.pooling, config.seed)
    state = AdamState.for_params(params, decay_keys=("W", "w_alpha"))
    rng = np.random.default_rng(config.seed)

    def snapshot():
        probe = LinearProbeParams(W=params["W"].copy(), b=params["b"].copy())
        attention = None
        if config.pooling == TIME_WEIGHTED:
            attention = AttentionPoolParams(
                w_alpha=params["w_alpha"].copy(), b_alpha=float(params["b_alpha"][0])
            )
        return probe, attention

    best_metric = -math.inf
    best_epoch = 0
    best_probe, best_attention = snapshot()
    curve: list[float] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            probe, attention = snapshot()
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            total_loss = 0.0
            for ex in batch:
                loss, g = _loss_and_grads(ex, probe, attention, task_kind)
                total_loss += loss
                grads["W"] += g.W
                grads["b"] += g.b
                if attention is not None:
                    grads["w_alpha"] += g.w_alpha
                    grads["b_alpha"][0] += g.b_alpha
            scale = 1.0 / len(batch)
            if not math.isfinite(total_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            for k in grads:
                grads[k] *= scale
            adam_step(params, grads, state, config.learning_rate, config.weight_decay)
            for tensor in params.values():
                if not np.all(np.isfinite(tensor)):
                    raise DivergenceError(f"non-finite parameters at epoch {epoch}")

        probe, attention = snapshot()
        dev_metric = evaluate_probe(dev, probe, attention, label_space)
        curve.append(dev_metric)
        if dev_metric > best_metric:
            best_metric = dev_metric
            best_epoch = epoch
            best_probe, best_attention = probe, attention

    trained = TrainedProbe(
        probe=best_probe,
        attention=best_attention,
        best_epoch=best_epoch,
        dev_metric=best_metric,
    )
    return trained, curve
