"""Audio ingestion and DSP: WAV I/O, resampling, pitch shifting, noise mixing,
and sliding-window segmentation of annotated long recordings.

Resampling is windowed-sinc polyphase with a Kaiser window (default 64 taps
per side at the band-limiting rate) and the anti-alias cutoff at the lower of
the two Nyquist frequencies.  Pitch shifting uses rate-change semantics: the
signal is band-limited-interpolated at stride ``factor``, so frequency scales
by ``factor`` and duration by ``1/factor``.

Buffers are mono float64 with a nominal [-1, 1] range; intermediate DSP
results may exceed it (noise mixes are peak-normalized back by default).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateInputError,
    DimensionMismatchError,
    FormatError,
    UnsupportedFormatError,
    ValidationError,
)

_WAVE_PCM = 1
_WAVE_FLOAT = 3


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DegenerateInputError(f"samples must be a nonempty vector, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DegenerateInputError("non-finite samples")
        if int(self.sample_rate_hz) < 1:
            raise ValidationError(f"sample rate must be >= 1, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class AnnotationTrack:
    """Timed label intervals over one recording."""

    events: tuple[tuple[float, float, int], ...]
    duration_s: float

    def __post_init__(self):
        if not (self.duration_s > 0):
            raise ValidationError("recording duration must be positive")
        events = tuple((float(s), float(e), int(l)) for s, e, l in self.events)
        for start, end, label in events:
            if not (0.0 <= start < end <= self.duration_s):
                raise ValidationError(
                    f"event ({start}, {end}) outside [0, {self.duration_s}]"
                )
            if label < 0:
                raise ValidationError("negative label index")
        object.__setattr__(self, "events", events)


@dataclass(frozen=True)
class WindowingConfig:
    window_s: float
    hop_s: float
    min_overlap_fraction: float = 0.5

    def __post_init__(self):
        if not (self.window_s > 0 and self.hop_s > 0):
            raise ValidationError("window and hop must be positive")
        if self.hop_s > self.window_s:
            raise ValidationError("hop must not exceed the window length")
        if not (0.0 < self.min_overlap_fraction <= 1.0):
            raise ValidationError("min_overlap_fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class WindowSegment:
    start_s: float
    buffer: AudioBuffer
    labels: frozenset[int]


@dataclass(frozen=True, eq=False)
class MixResult:
    buffer: AudioBuffer
    noise_gain: float
    peak_scale: float


# ---------------------------------------------------------------------------
# WAV I/O (RIFF, PCM16 and float32)
# ---------------------------------------------------------------------------


def load_wav(path) -> AudioBuffer:
    """Decode a PCM16 or float32 WAV file; channels are averaged to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        body_start = offset + 8
        if chunk_id == b"fmt ":
            if size < 16 or body_start + 16 > len(data):
                raise CorruptionError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            if body_start + size > len(data):
                raise CorruptionError(f"{path}: data chunk declares {size} bytes "
                                      f"but only {len(data) - body_start} remain")
            payload = data[body_start : body_start + size]
        offset = body_start + size + (size & 1)
    if fmt is None or payload is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise CorruptionError(f"{path}: zero channels")
    if audio_format == _WAVE_PCM and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported codec (format {audio_format}, {bits}-bit)"
        )
    if samples.size % channels != 0:
        raise CorruptionError(f"{path}: payload not a whole number of frames")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate_hz=rate)


def save_wav(buffer: AudioBuffer, path, codec: str = "pcm16") -> None:
    """Write mono WAV; pcm16 quantizes with rounding, float32 stores directly."""
    if codec == "pcm16":
        scaled = np.round(buffer.samples * 32768.0)
        frames = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = _WAVE_PCM, 16
    elif codec == "float32":
        frames = buffer.samples.astype("<f4").tobytes()
        audio_format, bits = _WAVE_FLOAT, 32
    else:
        raise UnsupportedFormatError(f"unknown codec {codec!r}")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(frames),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        1,
        buffer.sample_rate_hz,
        buffer.sample_rate_hz * block_align,
        block_align,
        bits,
        b"data",
        len(frames),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames)
        if len(frames) & 1:
            fh.write(b"\x00")


# ---------------------------------------------------------------------------
# Windowed-sinc polyphase resampling
# ---------------------------------------------------------------------------


def _polyphase_resample(
    x: np.ndarray, up: int, down: int, taps_per_side: int, kaiser_beta: float
) -> np.ndarray:
    """Resample x by the exact rational factor up/down.

    The kernel is a Kaiser-windowed sinc designed at the zero-stuffed rate,
    cutoff min(1/up, 1/down) of that rate's Nyquist, spanning
    ``taps_per_side`` samples per side at the band-limiting rate.  Output
    sample m equals the filtered zero-stuffed signal at index m*down.
    """
    half = taps_per_side * max(up, down)
    n = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = min(1.0 / up, 1.0 / down)
    kernel = cutoff * np.sinc(cutoff * n) * np.kaiser(2 * half + 1, kaiser_beta)
    kernel *= up / kernel.sum()

    n_out = -((-x.size * up) // down)  # ceil
    y = np.zeros(n_out)
    # tap offsets per phase: kernel index center + p + i*up for integer i
    i_lo = -(half + up - 1) // up  # floor(-half/up) is safe lower bound
    i_hi = half // up
    pad_left = i_hi + 1
    pad_right = -i_lo + 1
    xp = np.concatenate([np.zeros(pad_left), x, np.zeros(pad_right + down + 1)])
    for phase in range(up):
        if up == 1:
            m = np.arange(n_out)
        else:
            m0 = (phase * pow(down, -1, up)) % up
            m = np.arange(m0, n_out, up)
        if m.size == 0:
            continue
        base = (m * down) // up
        acc = np.zeros(m.size)
        for i in range(i_lo, i_hi + 1):
            tap_index = half + phase + i * up
            if tap_index < 0 or tap_index >= kernel.size:
                continue
            acc += kernel[tap_index] * xp[base - i + pad_left]
        y[m] = acc
    return y


def resample(
    buffer: AudioBuffer,
    target_rate: int,
    taps_per_side: int = 64,
    kaiser_beta: float = 8.6,
) -> AudioBuffer:
    """Anti-aliased sample-rate conversion to target_rate."""
    target_rate = int(target_rate)
    if target_rate < 1:
        raise ValidationError(f"target rate must be >= 1, got {target_rate}")
    if target_rate == buffer.sample_rate_hz:
        return AudioBuffer(samples=buffer.samples.copy(), sample_rate_hz=target_rate)
    g = math.gcd(buffer.sample_rate_hz, target_rate)
    up = target_rate // g
    down = buffer.sample_rate_hz // g
    y = _polyphase_resample(buffer.samples, up, down, taps_per_side, kaiser_beta)
    return AudioBuffer(samples=y, sample_rate_hz=target_rate)


def pitch_shift_rate(
    buffer: AudioBuffer,
    factor: float,
    taps_per_side: int = 64,
    kaiser_beta: float = 8.6,
) -> AudioBuffer:
    """Lower pitch by reading the signal at stride ``factor``.

    Frequencies scale by ``factor`` and the duration by ``1/factor``; the
    sample rate is unchanged.  Output length is ceil(len / factor).
    """
    if not (0.0 < factor <= 1.0):
        raise ValidationError(f"pitch factor must lie in (0, 1], got {factor}")
    if factor == 1.0:
        return AudioBuffer(samples=buffer.samples.copy(), sample_rate_hz=buffer.sample_rate_hz)
    ratio = Fraction(factor).limit_denominator(10_000)
    y = _polyphase_resample(
        buffer.samples, ratio.denominator, ratio.numerator, taps_per_side, kaiser_beta
    )
    return AudioBuffer(samples=y, sample_rate_hz=buffer.sample_rate_hz)


# ---------------------------------------------------------------------------
# SNR-calibrated noise mixing
# ---------------------------------------------------------------------------


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def mix_at_snr(
    signal: AudioBuffer, noise: AudioBuffer, snr_db: float, normalize: bool = True
) -> MixResult:
    """Mix noise into signal at an exact target SNR.

    Noise is tiled or trimmed to the signal length first, then scaled by
    g = rms(signal) / (rms(noise) * 10^(snr_db/20)).  If ``normalize`` and
    the mix peaks above 1, the whole mix is scaled down; the factor is
    reported (scaling both parts leaves the SNR untouched).
    """
    if signal.sample_rate_hz != noise.sample_rate_hz:
        raise DimensionMismatchError(
            f"sample rates differ: {signal.sample_rate_hz} vs {noise.sample_rate_hz}"
        )
    n = signal.samples.size
    noise_samples = noise.samples
    if noise_samples.size < n:
        reps = -(-n // noise_samples.size)
        noise_samples = np.tile(noise_samples, reps)
    noise_samples = noise_samples[:n]
    rms_signal = _rms(signal.samples)
    rms_noise = _rms(noise_samples)
    if rms_signal == 0.0 or rms_noise == 0.0:
        raise DegenerateInputError("signal and noise must have nonzero RMS")
    gain = rms_signal / (rms_noise * 10.0 ** (snr_db / 20.0))
    mix = signal.samples + gain * noise_samples
    peak = float(np.abs(mix).max())
    scale = 1.0 / peak if (normalize and peak > 1.0) else 1.0
    return MixResult(
        buffer=AudioBuffer(samples=mix * scale, sample_rate_hz=signal.sample_rate_hz),
        noise_gain=gain,
        peak_scale=scale,
    )


def measured_snr_db(signal: np.ndarray, scaled_noise: np.ndarray) -> float:
    """Post-mix SNR between a signal and the noise that was actually added."""
    p_signal = float(np.mean(np.asarray(signal) ** 2))
    p_noise = float(np.mean(np.asarray(scaled_noise) ** 2))
    if p_signal == 0.0 or p_noise == 0.0:
        raise DegenerateInputError("zero power")
    return 10.0 * math.log10(p_signal / p_noise)


# ---------------------------------------------------------------------------
# Sliding-window segmentation
# ---------------------------------------------------------------------------


def sliding_windows(
    buffer: AudioBuffer, annotations: AnnotationTrack, config: WindowingConfig
) -> list[WindowSegment]:
    """Cut windows at offsets 0, hop, 2*hop, ...; the final partial window is
    kept and zero-padded.

    A window receives label L when some event with label L overlaps it by at
    least min_overlap_fraction of the shorter of (event duration, window
    duration).
    """
    rate = buffer.sample_rate_hz
    total = buffer.samples.size
    window_n = round(config.window_s * rate)
    hop_n = round(config.hop_s * rate)
    if window_n > total:
        raise ValidationError(
            f"window of {config.window_s}s exceeds the {total / rate:.3f}s recording"
        )
    if window_n < 1 or hop_n < 1:
        raise ValidationError("window and hop must span at least one sample")

    segments = []
    offset = 0
    while offset < total:
        chunk = buffer.samples[offset : offset + window_n]
        if chunk.size < window_n:
            chunk = np.concatenate([chunk, np.zeros(window_n - chunk.size)])
        win_start = offset / rate
        win_end = win_start + config.window_s
        labels = set()
        for ev_start, ev_end, label in annotations.events:
            overlap = min(ev_end, win_end) - max(ev_start, win_start)
            needed = config.min_overlap_fraction * min(ev_end - ev_start, config.window_s)
            if overlap >= needed:
                labels.add(label)
        segments.append(
            WindowSegment(
                start_s=win_start,
                buffer=AudioBuffer(samples=chunk, sample_rate_hz=rate),
                labels=frozenset(labels),
            )
        )
        offset += hop_n
    return segments


def load_annotations(path, duration_s: float) -> AnnotationTrack:
    """Read line-delimited ``start end label`` records."""
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 'start end label'")
            events.append((float(parts[0]), float(parts[1]), int(parts[2])))
    return AnnotationTrack(events=tuple(events), duration_s=duration_s)
