"""Versioned binary sidecar for trained heads.

Layout: magic "PRBS", uint32 version, length-prefixed head kind, uint32
tensor count, then per tensor a length-prefixed name, uint8 ndim, uint32
dims, and the float64 little-endian payload.  Scalars travel as 0-d tensors,
so every trained head (linear probe, ESN, biLSTM) shares one format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, VersionError
from .pooling import TIME_WEIGHTED, AttentionPoolParams
from .probe import LinearProbeParams, TrainedProbe
from .recurrent import ESNConfig, ESNReservoir, LSTMCellParams, LSTMParams, TrainedBiLSTM, TrainedESN

MAGIC = b"PRBS"
VERSION = 1

HEAD_LINEAR = "linear"
HEAD_ESN = "esn"
HEAD_BILSTM = "bilstm"


def save_head(path, kind: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        encoded = kind.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_head(path) -> tuple[str, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a head sidecar")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported sidecar version {version}")
    offset = 8

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise CorruptionError(f"{path}: truncated sidecar")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    (kind_len,) = take("<H")
    kind = data[offset : offset + kind_len].decode("utf-8")
    offset += kind_len
    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<B")
        shape = tuple(take("<I")[0] for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        nbytes = n_values * 8
        if offset + nbytes > len(data):
            raise CorruptionError(f"{path}: truncated tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=n_values, offset=offset).reshape(shape)
        offset += nbytes
        tensors[name] = arr.copy()
    if offset != len(data):
        raise CorruptionError(f"{path}: trailing bytes")
    return kind, tensors


def save_trained_probe(trained: TrainedProbe, path) -> None:
    tensors = {
        "W": trained.probe.W,
        "b": trained.probe.b,
        "best_epoch": np.float64(trained.best_epoch),
        "dev_metric": np.float64(trained.dev_metric),
    }
    if trained.attention is not None:
        tensors["w_alpha"] = trained.attention.w_alpha
        tensors["b_alpha"] = np.float64(trained.attention.b_alpha)
    save_head(path, HEAD_LINEAR, tensors)


def load_trained_probe(path) -> TrainedProbe:
    kind, tensors = load_head(path)
    if kind != HEAD_LINEAR:
        raise FormatError(f"{path}: expected a linear head, found {kind!r}")
    attention = None
    if "w_alpha" in tensors:
        attention = AttentionPoolParams(
            w_alpha=tensors["w_alpha"], b_alpha=float(tensors["b_alpha"])
        )
    return TrainedProbe(
        probe=LinearProbeParams(W=tensors["W"], b=tensors["b"]),
        attention=attention,
        best_epoch=int(tensors["best_epoch"]),
        dev_metric=float(tensors["dev_metric"]),
    )


def save_trained_esn(trained: TrainedESN, path) -> None:
    cfg = trained.config
    save_head(
        path,
        HEAD_ESN,
        {
            "input_weights": trained.reservoir.input_weights,
            "recurrent_weights": trained.reservoir.recurrent_weights,
            "readout": trained.readout,
            "bias": trained.bias,
            "leak_rate": np.float64(cfg.leak_rate),
            "spectral_radius": np.float64(cfg.spectral_radius),
            "input_scaling": np.float64(cfg.input_scaling),
            "ridge_lambda": np.float64(cfg.ridge_lambda),
            "seed": np.float64(cfg.seed),
            "dev_metric": np.float64(trained.dev_metric),
        },
    )


def load_trained_esn(path) -> TrainedESN:
    kind, tensors = load_head(path)
    if kind != HEAD_ESN:
        raise FormatError(f"{path}: expected an ESN head, found {kind!r}")
    reservoir = ESNReservoir(
        input_weights=tensors["input_weights"],
        recurrent_weights=tensors["recurrent_weights"],
    )
    config = ESNConfig(
        reservoir_size=reservoir.size,
        spectral_radius=float(tensors["spectral_radius"]),
        input_scaling=float(tensors["input_scaling"]),
        leak_rate=float(tensors["leak_rate"]),
        ridge_lambda=float(tensors["ridge_lambda"]),
        seed=int(tensors["seed"]),
    )
    return TrainedESN(
        config=config,
        reservoir=reservoir,
        readout=tensors["readout"],
        bias=tensors["bias"],
        dev_metric=float(tensors["dev_metric"]),
    )


def save_trained_bilstm(trained: TrainedBiLSTM, path) -> None:
    tensors = dict(trained.params.flat())
    tensors["hidden_size"] = np.float64(trained.params.hidden_size)
    tensors["num_layers"] = np.float64(trained.params.num_layers)
    tensors["pool_mean"] = np.float64(1.0 if trained.pool == "mean" else 0.0)
    tensors["best_epoch"] = np.float64(trained.best_epoch)
    tensors["dev_metric"] = np.float64(trained.dev_metric)
    save_head(path, HEAD_BILSTM, tensors)


def load_trained_bilstm(path) -> TrainedBiLSTM:
    kind, tensors = load_head(path)
    if kind != HEAD_BILSTM:
        raise FormatError(f"{path}: expected a biLSTM head, found {kind!r}")
    hidden_size = int(tensors["hidden_size"])
    num_layers = int(tensors["num_layers"])
    cells = []
    for idx in range(num_layers):
        fwd = LSTMCellParams(W=tensors[f"layer{idx}.fwd.W"], b=tensors[f"layer{idx}.fwd.b"])
        bwd = LSTMCellParams(W=tensors[f"layer{idx}.bwd.W"], b=tensors[f"layer{idx}.bwd.b"])
        cells.append((fwd, bwd))
    params = LSTMParams(
        cells=cells,
        out_W=tensors["out.W"],
        out_b=tensors["out.b"],
        hidden_size=hidden_size,
    )
    return TrainedBiLSTM(
        params=params,
        pool="mean" if tensors["pool_mean"] else "final",
        best_epoch=int(tensors["best_epoch"]),
        dev_metric=float(tensors["dev_metric"]),
    )
