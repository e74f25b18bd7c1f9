"""Standalone writer and validator for the ``.prbe`` embedding container.

This mirrors the wire format consumed by the probing toolkit byte for byte:

    magic "PRBE" | u32 version | u32 d | u32 frame_stride_us | u32 layer |
    u32 count, then per example: u32 id_len | UTF-8 id | u32 T |
    T*d little-endian float32

The extractor deliberately reimplements the format instead of importing the
toolkit; the shared conformance vectors in ``conformance/`` keep the two
sides honest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PRBE"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4s5I")
_U32 = struct.Struct("<I")


class ContainerError(Exception):
    pass


def write_container(
    path,
    examples: list[tuple[str, np.ndarray]],
    layer: int,
    frame_stride_us: int = 20_000,
) -> None:
    """Write (example_id, T x d float matrix) pairs for one encoder layer."""
    if examples:
        d = examples[0][1].shape[1]
        for example_id, matrix in examples:
            if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] != d:
                raise ContainerError(
                    f"bad matrix shape {matrix.shape} for {example_id!r} (d={d})"
                )
            if not np.all(np.isfinite(matrix)):
                raise ContainerError(f"non-finite embeddings for {example_id!r}")
    else:
        d, layer, frame_stride_us = 0, 0, 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, frame_stride_us, layer, len(examples)))
        for example_id, matrix in examples:
            ident = example_id.encode("utf-8")
            fh.write(_U32.pack(len(ident)))
            fh.write(ident)
            fh.write(_U32.pack(matrix.shape[0]))
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


@dataclass
class FormatReport:
    """Outcome of validating one container file."""

    path: str
    ok: bool
    d: int = 0
    layer: int = 0
    frame_stride_us: int = 0
    example_count: int = 0
    problems: list[str] = field(default_factory=list)

    def summary(self) -> str:
        status = "OK" if self.ok else "FAIL"
        detail = f"{self.example_count} examples, d={self.d}, layer={self.layer}"
        if self.problems:
            detail = "; ".join(self.problems)
        return f"{status} {self.path}: {detail}"


def verify_format(path) -> FormatReport:
    """Validate header/payload consistency the same way the toolkit reader does."""
    report = FormatReport(path=str(path), ok=False)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        report.problems.append(f"unreadable: {exc}")
        return report
    if len(data) < _HEADER.size:
        report.problems.append("shorter than the fixed header")
        return report
    magic, version, d, stride_us, layer, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        report.problems.append(f"bad magic {magic!r}")
        return report
    if version != FORMAT_VERSION:
        report.problems.append(f"unsupported version {version}")
        return report
    report.d, report.layer = d, layer
    report.frame_stride_us, report.example_count = stride_us, count

    offset = _HEADER.size
    for i in range(count):
        if offset + 4 > len(data):
            report.problems.append(f"truncated before example {i}")
            return report
        (id_len,) = _U32.unpack_from(data, offset)
        offset += 4
        if offset + id_len + 4 > len(data):
            report.problems.append(f"truncated inside example {i}")
            return report
        try:
            example_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError:
            report.problems.append(f"example {i} id is not UTF-8")
            return report
        offset += id_len
        (num_frames,) = _U32.unpack_from(data, offset)
        offset += 4
        if num_frames < 1 or d < 1:
            report.problems.append(f"example {example_id!r} declares an empty matrix")
            return report
        payload = num_frames * d * 4
        if offset + payload > len(data):
            report.problems.append(
                f"payload-length mismatch: {example_id!r} wants {payload} bytes, "
                f"{len(data) - offset} remain"
            )
            return report
        values = np.frombuffer(data, dtype="<f4", count=num_frames * d, offset=offset)
        if not np.all(np.isfinite(values)):
            report.problems.append(f"non-finite values in {example_id!r}")
            return report
        offset += payload
    if offset != len(data):
        report.problems.append(f"{len(data) - offset} trailing bytes")
        return report
    report.ok = True
    return report
