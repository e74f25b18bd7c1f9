"""Minimal WAV ingestion for the extractor: PCM16 / float32, averaged to
mono, resampled to the encoder rate when needed."""

from __future__ import annotations

import logging
import math
import struct
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

log = logging.getLogger(__name__)


class WavError(Exception):
    pass


def load_wav(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        body = offset + 8
        if chunk_id == b"fmt " and body + 16 <= len(data):
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if body + size > len(data):
                raise WavError(f"{path}: truncated data chunk")
            payload = data[body : body + size]
        offset = body + size + (size & 1)
    if fmt is None or payload is None:
        raise WavError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    else:
        raise WavError(f"{path}: unsupported codec (format {audio_format}, {bits}-bit)")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples, rate


def ensure_rate(samples: np.ndarray, rate: int, target_rate: int, name: str = "") -> np.ndarray:
    """Resample to the encoder rate when the file rate differs."""
    if rate == target_rate:
        return samples
    log.info("resampling %s from %d Hz to %d Hz", name or "input", rate, target_rate)
    g = math.gcd(rate, target_rate)
    return resample_poly(samples, target_rate // g, rate // g).astype(np.float32)
