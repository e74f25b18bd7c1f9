"""Regenerate the shared container-format conformance vectors.

Run from the repository root:  python conformance/generate.py
The emitted files are committed; both the probing toolkit and the extractor
validate their readers/writers against them byte for byte.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from bioprobe.store import FrameEmbeddingSequence, write_container

HERE = Path(__file__).parent


def main():
    vectors = []

    basic = [
        FrameEmbeddingSequence(
            example_id="call_0001",
            layer=7,
            frames=np.array([[0.5, -1.25, 2.0], [3.5, 0.0, -0.125]], dtype=np.float32),
            frame_stride_ms=20.0,
        ),
        FrameEmbeddingSequence(
            example_id="call_0002",
            layer=7,
            frames=np.array([[1.0, 2.0, 3.0]], dtype=np.float32),
            frame_stride_ms=20.0,
        ),
    ]
    write_container(basic, HERE / "basic.prbe")
    vectors.append(describe("basic.prbe", basic, d=3, layer=7, stride_us=20000))

    single = [
        FrameEmbeddingSequence(
            example_id="x",
            layer=0,
            frames=np.array([[-0.0078125]], dtype=np.float32),
            frame_stride_ms=25.0,
        )
    ]
    write_container(single, HERE / "single.prbe")
    vectors.append(describe("single.prbe", single, d=1, layer=0, stride_us=25000))

    write_container([], HERE / "empty.prbe")
    vectors.append(
        {
            "file": "empty.prbe",
            "d": 0,
            "layer": 0,
            "frame_stride_us": 0,
            "examples": [],
            "sha256": sha256(HERE / "empty.prbe"),
        }
    )

    (HERE / "vectors.json").write_text(json.dumps(vectors, indent=2) + "\n")
    print(f"wrote {len(vectors)} vectors")


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def describe(name, sequences, d, layer, stride_us):
    return {
        "file": name,
        "d": d,
        "layer": layer,
        "frame_stride_us": stride_us,
        "examples": [
            {
                "id": seq.example_id,
                "num_frames": seq.num_frames,
                "values": [float(v) for v in seq.frames.reshape(-1)],
            }
            for seq in sequences
        ],
        "sha256": sha256(HERE / name),
    }


if __name__ == "__main__":
    main()
