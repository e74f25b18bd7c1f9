"""Sequence-level heads: Echo State Network and bidirectional LSTM.

The ESN runs a fixed random leaky-tanh recurrence over the frame sequence and
fits only a linear readout in closed form (ridge regression on the pooled
states, bias row unregularized).  The biLSTM is trained by exact
backpropagation through time with the same Adam / weight-decay / epoch
protocol as the linear probes.

Gate layout inside each LSTM cell is i, f, g, o stacked along the first axis
of one (4H x (in+H)) weight matrix.  Forget-gate biases start at 1.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DivergenceError,
    IllConditionedError,
    ValidationError,
)
from .pooling import _frames
from .probe import (
    AdamState,
    TrainConfig,
    adam_step,
    binary_cross_entropy,
    cross_entropy,
)
from .store import MULTI_LABEL, SINGLE_LABEL, LabelSpace

POOL_MEAN = "mean"
POOL_FINAL = "final"


# ---------------------------------------------------------------------------
# Echo State Network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ESNConfig:
    reservoir_size: int
    spectral_radius: float = 0.9
    input_scaling: float = 1.0
    leak_rate: float = 1.0
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.reservoir_size < 1:
            raise ValidationError("reservoir_size must be >= 1")
        if not (self.spectral_radius > 0 and self.input_scaling > 0):
            raise ValidationError("spectral_radius and input_scaling must be positive")
        if not (0.0 < self.leak_rate <= 1.0):
            raise ValidationError("leak_rate must lie in (0, 1]")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be non-negative")


@dataclass(frozen=True, eq=False)
class ESNReservoir:
    """Fixed random weights; immutable after initialization."""

    input_weights: np.ndarray
    recurrent_weights: np.ndarray

    def __post_init__(self):
        w_in = np.ascontiguousarray(self.input_weights, dtype=np.float64)
        w_rec = np.ascontiguousarray(self.recurrent_weights, dtype=np.float64)
        if w_in.ndim != 2 or w_rec.shape != (w_in.shape[0], w_in.shape[0]):
            raise DimensionMismatchError(
                f"bad reservoir shapes: input {w_in.shape}, recurrent {w_rec.shape}"
            )
        w_in.flags.writeable = False
        w_rec.flags.writeable = False
        object.__setattr__(self, "input_weights", w_in)
        object.__setattr__(self, "recurrent_weights", w_rec)

    @property
    def size(self) -> int:
        return self.recurrent_weights.shape[0]


def esn_init(config: ESNConfig, d: int) -> ESNReservoir:
    """Seeded dense Gaussian weights, recurrent matrix rescaled to the target radius."""
    rng = np.random.default_rng(config.seed)
    w_in = rng.standard_normal((config.reservoir_size, d)) * config.input_scaling
    w_rec = rng.standard_normal((config.reservoir_size, config.reservoir_size))
    rho = float(np.abs(np.linalg.eigvals(w_rec)).max())
    if rho == 0.0:
        raise IllConditionedError("recurrent matrix has zero spectral radius")
    w_rec *= config.spectral_radius / rho
    return ESNReservoir(input_weights=w_in, recurrent_weights=w_rec)


def esn_run(seq, reservoir: ESNReservoir, config: ESNConfig, pooling: str = POOL_MEAN) -> np.ndarray:
    """Run the leaky-tanh recurrence from a zero state; pool the state trajectory.

    h_t = (1 - leak) * h_{t-1} + leak * tanh(W_in x_t + W_rec h_{t-1})
    """
    frames = _frames(seq)
    if frames.shape[1] != reservoir.input_weights.shape[1]:
        raise DimensionMismatchError(
            f"frame width {frames.shape[1]} != reservoir input width "
            f"{reservoir.input_weights.shape[1]}"
        )
    leak = config.leak_rate
    h = np.zeros(reservoir.size)
    states = np.empty((frames.shape[0], reservoir.size))
    for t in range(frames.shape[0]):
        pre = reservoir.input_weights @ frames[t] + reservoir.recurrent_weights @ h
        h = (1.0 - leak) * h + leak * np.tanh(pre)
        states[t] = h
    if pooling == POOL_MEAN:
        return states.mean(axis=0)
    if pooling == POOL_FINAL:
        return states[-1]
    raise ValidationError(f"unknown ESN pooling {pooling!r}")


def esn_fit_readout(
    states: np.ndarray, targets: np.ndarray, ridge_lambda: float
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ridge regression on bias-augmented states.

    Solves (X^T X + lambda I') beta = X^T Y with the bias row unregularized.
    Returns (readout, bias) with shapes (C, N) and (C,).
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if states.ndim != 2 or targets.ndim != 2 or states.shape[0] != targets.shape[0]:
        raise DimensionMismatchError(
            f"states {states.shape} and targets {targets.shape} do not align"
        )
    if states.shape[0] < 1:
        raise DegenerateInputError("need at least one state row")
    m, n = states.shape
    x = np.hstack([states, np.ones((m, 1))])
    gram = x.T @ x
    reg = np.eye(n + 1) * ridge_lambda
    reg[n, n] = 0.0
    lhs = gram + reg
    rhs = x.T @ targets
    if ridge_lambda == 0.0:
        cond = np.linalg.cond(lhs)
        if not np.isfinite(cond) or cond > 1e12:
            raise IllConditionedError(
                f"ridge system is singular at lambda=0 (condition number {cond:.3g})"
            )
    try:
        beta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(f"ridge solve failed: {exc}") from exc
    return beta[:n].T, beta[n]


def esn_predict(states: np.ndarray, readout: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.asarray(states) @ readout.T + bias


@dataclass(frozen=True, eq=False)
class TrainedESN:
    config: ESNConfig
    reservoir: ESNReservoir
    readout: np.ndarray
    bias: np.ndarray
    dev_metric: float


def _esn_targets(examples, label_space: LabelSpace) -> np.ndarray:
    c = label_space.num_labels
    if label_space.task_kind == SINGLE_LABEL:
        y = np.zeros((len(examples), c))
        for i, ex in enumerate(examples):
            y[i, int(ex.target)] = 1.0
        return y
    return np.array([np.asarray(ex.target, dtype=np.float64) for ex in examples])


def _metric_targets(examples, label_space: LabelSpace) -> np.ndarray:
    if label_space.task_kind == SINGLE_LABEL:
        return np.array([int(ex.target) for ex in examples], dtype=np.int64)
    return np.array([np.asarray(ex.target, dtype=np.int64) for ex in examples])


def train_esn(train, dev, label_space: LabelSpace, config: ESNConfig, d: int) -> TrainedESN:
    """Fit the readout on train states; dev metric reported for selection."""
    if not train or not dev:
        raise DegenerateInputError("train and dev splits must be nonempty")
    reservoir = esn_init(config, d)
    train_states = np.array([esn_run(ex.seq, reservoir, config) for ex in train])
    readout, bias = esn_fit_readout(train_states, _esn_targets(train, label_space), config.ridge_lambda)
    dev_states = np.array([esn_run(ex.seq, reservoir, config) for ex in dev])
    batch = metrics.PredictionBatch(
        scores=esn_predict(dev_states, readout, bias),
        targets=_metric_targets(dev, label_space),
        task_kind=label_space.task_kind,
    )
    return TrainedESN(
        config=config,
        reservoir=reservoir,
        readout=readout,
        bias=bias,
        dev_metric=metrics.evaluate(batch),
    )


def evaluate_esn(trained: TrainedESN, examples, label_space: LabelSpace) -> float:
    states = np.array([esn_run(ex.seq, trained.reservoir, trained.config) for ex in examples])
    batch = metrics.PredictionBatch(
        scores=esn_predict(states, trained.readout, trained.bias),
        targets=_metric_targets(examples, label_space),
        task_kind=label_space.task_kind,
    )
    return metrics.evaluate(batch)


# ---------------------------------------------------------------------------
# Bidirectional LSTM
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LSTMCellParams:
    """One direction of one layer: stacked i,f,g,o weights over [x; h]."""

    W: np.ndarray
    b: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4


@dataclass(eq=False)
class LSTMParams:
    """Per-layer (forward, backward) cells plus the linear output head."""

    cells: list[tuple[LSTMCellParams, LSTMCellParams]]
    out_W: np.ndarray
    out_b: np.ndarray
    hidden_size: int

    @property
    def num_layers(self) -> int:
        return len(self.cells)

    def flat(self) -> dict[str, np.ndarray]:
        """Named views of every tensor; in-place updates reach the params."""
        tensors: dict[str, np.ndarray] = {}
        for idx, (fwd, bwd) in enumerate(self.cells):
            tensors[f"layer{idx}.fwd.W"] = fwd.W
            tensors[f"layer{idx}.fwd.b"] = fwd.b
            tensors[f"layer{idx}.bwd.W"] = bwd.W
            tensors[f"layer{idx}.bwd.b"] = bwd.b
        tensors["out.W"] = self.out_W
        tensors["out.b"] = self.out_b
        return tensors


def init_bilstm(d: int, hidden_size: int, num_classes: int, num_layers: int, seed: int) -> LSTMParams:
    """Seeded uniform init scaled by fan-in; forget-gate biases start at 1."""
    if num_layers not in (1, 2):
        raise ValidationError("num_layers must be 1 or 2")
    rng = np.random.default_rng(seed)
    cells = []
    in_dim = d
    for _ in range(num_layers):
        pair = []
        for _direction in range(2):
            fan_in = in_dim + hidden_size
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(4 * hidden_size, fan_in))
            b = np.zeros(4 * hidden_size)
            b[hidden_size : 2 * hidden_size] = 1.0
            pair.append(LSTMCellParams(W=w, b=b))
        cells.append((pair[0], pair[1]))
        in_dim = 2 * hidden_size
    bound = 1.0 / math.sqrt(2 * hidden_size)
    out_w = rng.uniform(-bound, bound, size=(num_classes, 2 * hidden_size))
    return LSTMParams(cells=cells, out_W=out_w, out_b=np.zeros(num_classes), hidden_size=hidden_size)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _run_direction(cell: LSTMCellParams, inputs: np.ndarray) -> dict[str, np.ndarray]:
    """Unroll one direction over inputs given in that direction's time order."""
    t_len, in_dim = inputs.shape
    h_size = cell.hidden_size
    xh = np.empty((t_len, in_dim + h_size))
    gates = np.empty((t_len, 4, h_size))
    c_all = np.empty((t_len, h_size))
    tanh_c = np.empty((t_len, h_size))
    h_all = np.empty((t_len, h_size))
    c_prev_all = np.empty((t_len, h_size))
    h = np.zeros(h_size)
    c = np.zeros(h_size)
    for t in range(t_len):
        xh[t, :in_dim] = inputs[t]
        xh[t, in_dim:] = h
        z = cell.W @ xh[t] + cell.b
        i = _sigmoid(z[:h_size])
        f = _sigmoid(z[h_size : 2 * h_size])
        g = np.tanh(z[2 * h_size : 3 * h_size])
        o = _sigmoid(z[3 * h_size :])
        c_prev_all[t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        c_all[t] = c
        tanh_c[t] = tc
        h_all[t] = h
    return {
        "xh": xh,
        "gates": gates,
        "c": c_all,
        "tanh_c": tanh_c,
        "h": h_all,
        "c_prev": c_prev_all,
        "in_dim": in_dim,
    }


def _backward_direction(
    cell: LSTMCellParams, cache: dict[str, np.ndarray], d_h_stream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BPTT through one direction; returns (dX, dW, db) in stream order."""
    xh = cache["xh"]
    gates = cache["gates"]
    tanh_c = cache["tanh_c"]
    c_prev = cache["c_prev"]
    in_dim = cache["in_dim"]
    t_len, h_size = cache["h"].shape
    d_w = np.zeros_like(cell.W)
    d_b = np.zeros_like(cell.b)
    d_x = np.zeros((t_len, in_dim))
    dc = np.zeros(h_size)
    dh_carry = np.zeros(h_size)
    dz = np.empty(4 * h_size)
    for t in range(t_len - 1, -1, -1):
        i, f, g, o = gates[t]
        dh = d_h_stream[t] + dh_carry
        do = dh * tanh_c[t]
        dc = dc + dh * o * (1.0 - tanh_c[t] ** 2)
        di = dc * g
        df = dc * c_prev[t]
        dg = dc * i
        dz[:h_size] = di * i * (1.0 - i)
        dz[h_size : 2 * h_size] = df * f * (1.0 - f)
        dz[2 * h_size : 3 * h_size] = dg * (1.0 - g**2)
        dz[3 * h_size :] = do * o * (1.0 - o)
        d_w += np.outer(dz, xh[t])
        d_b += dz
        dxh = cell.W.T @ dz
        d_x[t] = dxh[:in_dim]
        dh_carry = dxh[in_dim:]
        dc = dc * f
    return d_x, d_w, d_b


@dataclass(eq=False)
class BiLSTMForward:
    logits: np.ndarray
    top_states: np.ndarray
    cache: dict


def bilstm_forward(seq, params: LSTMParams, pool: str = POOL_MEAN) -> BiLSTMForward:
    """Run both directions per layer; classify from pooled top-layer states."""
    frames = _frames(seq)
    if frames.shape[1] != params.cells[0][0].W.shape[1] - params.hidden_size:
        raise DimensionMismatchError(
            f"frame width {frames.shape[1]} does not match the first LSTM layer"
        )
    if pool not in (POOL_MEAN, POOL_FINAL):
        raise ValidationError(f"unknown biLSTM pooling {pool!r}")
    layer_input = frames
    layer_caches = []
    for fwd, bwd in params.cells:
        f_cache = _run_direction(fwd, layer_input)
        b_cache = _run_direction(bwd, layer_input[::-1])
        concat = np.hstack([f_cache["h"], b_cache["h"][::-1]])
        layer_caches.append((f_cache, b_cache))
        layer_input = concat
    top = layer_input
    if pool == POOL_MEAN:
        pooled = top.mean(axis=0)
    else:
        f_cache, b_cache = layer_caches[-1]
        pooled = np.concatenate([f_cache["h"][-1], b_cache["h"][-1]])
    logits = params.out_W @ pooled + params.out_b
    cache = {
        "layers": layer_caches,
        "pooled": pooled,
        "pool": pool,
        "params": params,
        "t_len": frames.shape[0],
    }
    return BiLSTMForward(logits=logits, top_states=top, cache=cache)


@dataclass(eq=False)
class BiLSTMGrads:
    cells: list[tuple[dict[str, np.ndarray], dict[str, np.ndarray]]]
    out_W: np.ndarray
    out_b: np.ndarray

    def flat(self) -> dict[str, np.ndarray]:
        tensors: dict[str, np.ndarray] = {}
        for idx, (fwd, bwd) in enumerate(self.cells):
            tensors[f"layer{idx}.fwd.W"] = fwd["W"]
            tensors[f"layer{idx}.fwd.b"] = fwd["b"]
            tensors[f"layer{idx}.bwd.W"] = bwd["W"]
            tensors[f"layer{idx}.bwd.b"] = bwd["b"]
        tensors["out.W"] = self.out_W
        tensors["out.b"] = self.out_b
        return tensors


def bilstm_backward(cache: dict | None, loss_grad: np.ndarray) -> BiLSTMGrads:
    """Exact BPTT through both directions and layers given dL/dlogits."""
    if cache is None:
        raise ValidationError("bilstm_backward needs the cache from bilstm_forward")
    params: LSTMParams = cache["params"]
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (params.out_W.shape[0],):
        raise DimensionMismatchError(
            f"loss gradient shape {loss_grad.shape} != ({params.out_W.shape[0]},)"
        )
    t_len = cache["t_len"]
    h_size = params.hidden_size

    d_out_w = np.outer(loss_grad, cache["pooled"])
    d_out_b = loss_grad.copy()
    d_pooled = params.out_W.T @ loss_grad

    # gradients w.r.t. each direction's state stream, top layer first
    if cache["pool"] == POOL_MEAN:
        d_concat = np.tile(d_pooled / t_len, (t_len, 1))
        d_hf = d_concat[:, :h_size].copy()
        d_hb = d_concat[::-1, h_size:].copy()
    else:
        d_hf = np.zeros((t_len, h_size))
        d_hb = np.zeros((t_len, h_size))
        d_hf[-1] = d_pooled[:h_size]
        d_hb[-1] = d_pooled[h_size:]

    cell_grads: list[tuple[dict, dict] | None] = [None] * params.num_layers
    for idx in range(params.num_layers - 1, -1, -1):
        fwd, bwd = params.cells[idx]
        f_cache, b_cache = cache["layers"][idx]
        dx_f, dw_f, db_f = _backward_direction(fwd, f_cache, d_hf)
        dx_b, dw_b, db_b = _backward_direction(bwd, b_cache, d_hb)
        cell_grads[idx] = ({"W": dw_f, "b": db_f}, {"W": dw_b, "b": db_b})
        d_input = dx_f + dx_b[::-1]
        if idx > 0:
            d_hf = d_input[:, :h_size].copy()
            d_hb = d_input[::-1, h_size:].copy()
    return BiLSTMGrads(cells=cell_grads, out_W=d_out_w, out_b=d_out_b)


@dataclass(eq=False)
class TrainedBiLSTM:
    params: LSTMParams
    pool: str
    best_epoch: int
    dev_metric: float


def _bilstm_scores(examples, params: LSTMParams, pool: str) -> np.ndarray:
    return np.array([bilstm_forward(ex.seq, params, pool).logits for ex in examples])


def evaluate_bilstm(trained: TrainedBiLSTM, examples, label_space: LabelSpace) -> float:
    batch = metrics.PredictionBatch(
        scores=_bilstm_scores(examples, trained.params, trained.pool),
        targets=_metric_targets(examples, label_space),
        task_kind=label_space.task_kind,
    )
    return metrics.evaluate(batch)


def train_bilstm(
    train,
    dev,
    label_space: LabelSpace,
    config: TrainConfig,
    hidden_size: int = 256,
    num_layers: int = 2,
    pool: str = POOL_MEAN,
) -> tuple[TrainedBiLSTM, list[float]]:
    """Same protocol as the linear probes: Adam, decoupled decay, best dev epoch."""
    if not train or not dev:
        raise DegenerateInputError("train and dev splits must be nonempty")
    d = _frames(train[0].seq).shape[1]
    params = init_bilstm(d, hidden_size, label_space.num_labels, num_layers, config.seed)
    tensors = params.flat()
    decay_keys = tuple(k for k in tensors if k.endswith(".W"))
    state = AdamState.for_params(tensors, decay_keys=decay_keys)
    rng = np.random.default_rng(config.seed)
    task_kind = label_space.task_kind

    best_metric = -math.inf
    best_epoch = 0
    best_params = copy.deepcopy(params)
    curve: list[float] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            grads = {k: np.zeros_like(v) for k, v in tensors.items()}
            total_loss = 0.0
            for ex in batch:
                fwd = bilstm_forward(ex.seq, params, pool)
                if task_kind == SINGLE_LABEL:
                    loss, d_logits = cross_entropy(fwd.logits, int(ex.target))
                else:
                    loss, d_logits = binary_cross_entropy(fwd.logits, np.asarray(ex.target))
                total_loss += loss
                for k, g in bilstm_backward(fwd.cache, d_logits).flat().items():
                    grads[k] += g
            if not math.isfinite(total_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            scale = 1.0 / len(batch)
            for k in grads:
                grads[k] *= scale
            adam_step(tensors, grads, state, config.learning_rate, config.weight_decay)
            for tensor in tensors.values():
                if not np.all(np.isfinite(tensor)):
                    raise DivergenceError(f"non-finite parameters at epoch {epoch}")

        dev_metric = metrics.evaluate(
            metrics.PredictionBatch(
                scores=_bilstm_scores(dev, params, pool),
                targets=_metric_targets(dev, label_space),
                task_kind=task_kind,
            )
        )
        curve.append(dev_metric)
        if dev_metric > best_metric:
            best_metric = dev_metric
            best_epoch = epoch
            best_params = copy.deepcopy(params)

    trained = TrainedBiLSTM(
        params=best_params, pool=pool, best_epoch=best_epoch, dev_metric=best_metric
    )
    return trained, curve
