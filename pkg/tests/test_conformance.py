"""The committed conformance vectors pin the container wire format.

Any reader or writer change that breaks byte compatibility fails here first.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from bioprobe.store import FrameEmbeddingSequence, read_container, write_container

VECTOR_DIR = Path(__file__).parent.parent / "conformance"
VECTORS = json.loads((VECTOR_DIR / "vectors.json").read_text())


@pytest.mark.parametrize("vector", VECTORS, ids=[v["file"] for v in VECTORS])
def test_reader_matches_vector(vector):
    path = VECTOR_DIR / vector["file"]
    assert hashlib.sha256(path.read_bytes()).hexdigest() == vector["sha256"]
    sequences = read_container(path)
    assert len(sequences) == len(vector["examples"])
    for seq, expected in zip(sequences, vector["examples"]):
        assert seq.example_id == expected["id"]
        assert seq.layer == vector["layer"]
        assert round(seq.frame_stride_ms * 1000) == vector["frame_stride_us"]
        assert seq.num_frames == expected["num_frames"]
        np.testing.assert_array_equal(
            seq.frames.reshape(-1), np.array(expected["values"], dtype=np.float32)
        )


@pytest.mark.parametrize("vector", VECTORS, ids=[v["file"] for v in VECTORS])
def test_writer_reproduces_vector_bytes(vector, tmp_path):
    sequences = [
        FrameEmbeddingSequence(
            example_id=example["id"],
            layer=vector["layer"],
            frames=np.array(example["values"], dtype=np.float32).reshape(
                example["num_frames"], vector["d"]
            ),
            frame_stride_ms=vector["frame_stride_us"] / 1000.0,
        )
        for example in vector["examples"]
    ]
    out = tmp_path / vector["file"]
    write_container(sequences, out)
    assert out.read_bytes() == (VECTOR_DIR / vector["file"]).read_bytes()
