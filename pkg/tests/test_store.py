import json

import numpy as np
import pytest

from bioprobe import store
from bioprobe.errors import (
    CorruptionError,
    DimensionMismatchError,
    FormatError,
    ValidationError,
    VersionError,
)


def seq(example_id, frames, layer=0, stride=20.0):
    return store.FrameEmbeddingSequence(
        example_id=example_id,
        layer=layer,
        frames=np.asarray(frames, dtype=np.float32),
        frame_stride_ms=stride,
    )


class TestContainerRoundtrip:
    def test_single_sequence_roundtrip(self, tmp_path):
        original = [seq("ex0", [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])]
        path = tmp_path / "one.prbe"
        store.write_container(original, path)
        back = store.read_container(path)
        assert len(back) == 1
        assert back[0].same_as(original[0])

    def test_empty_list_roundtrip(self, tmp_path):
        path = tmp_path / "empty.prbe"
        store.write_container([], path)
        assert store.read_container(path) == []

    def test_many_sequences_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        original = [
            seq(f"ex{i}", rng.standard_normal((rng.integers(1, 9), 5)), layer=4)
            for i in range(12)
        ]
        path = tmp_path / "many.prbe"
        store.write_container(original, path)
        back = store.read_container(path)
        assert len(back) == len(original)
        for a, b in zip(original, back):
            assert a.same_as(b)

    def test_layer_and_stride_survive(self, tmp_path):
        original = [seq("x", [[0.5]], layer=11, stride=25.0)]
        path = tmp_path / "meta.prbe"
        store.write_container(original, path)
        back = store.read_container(path)[0]
        assert back.layer == 11
        assert back.frame_stride_ms == 25.0

    def test_magic_bytes_lead_the_file(self, tmp_path):
        path = tmp_path / "magic.prbe"
        store.write_container([seq("x", [[1.0]])], path)
        assert path.read_bytes()[:4] == b"PRBE"


class TestContainerErrors:
    def test_mixed_dims_rejected(self, tmp_path):
        mixed = [seq("a", [[1.0, 2.0]]), seq("b", [[1.0, 2.0, 3.0]])]
        with pytest.raises(DimensionMismatchError):
            store.write_container(mixed, tmp_path / "bad.prbe")

    def test_mixed_layers_rejected(self, tmp_path):
        mixed = [seq("a", [[1.0]], layer=0), seq("b", [[1.0]], layer=1)]
        with pytest.raises(ValidationError):
            store.write_container(mixed, tmp_path / "bad.prbe")

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.prbe"
        store.write_container([seq("x", [[1.0]])], path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            store.read_container(path)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "bad.prbe"
        store.write_container([seq("x", [[1.0]])], path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionError):
            store.read_container(path)

    def test_truncated_matrix(self, tmp_path):
        path = tmp_path / "bad.prbe"
        store.write_container([seq("x", [[1.0, 2.0], [3.0, 4.0]])], path)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(CorruptionError):
            store.read_container(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "bad.prbe"
        store.write_container([seq("x", [[1.0]])], path)
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(CorruptionError):
            store.read_container(path)


class TestSequenceValidation:
    def test_empty_frames_rejected(self):
        with pytest.raises(ValidationError):
            seq("x", np.zeros((0, 3), dtype=np.float32))

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            seq("x", [[np.nan, 1.0]])

    def test_negative_layer_rejected(self):
        with pytest.raises(ValidationError):
            seq("x", [[1.0]], layer=-1)


def write_manifest(tmp_path, records, task_kind=store.SINGLE_LABEL, names=("a", "b")):
    path = tmp_path / "data.jsonl"
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    (tmp_path / "data.labels.json").write_text(
        json.dumps({"task_kind": task_kind, "label_names": list(names)})
    )
    return path


class TestManifest:
    def test_622_ratio_reported(self, tmp_path):
        records = []
        for i in range(10):
            split = "train" if i < 6 else ("dev" if i < 8 else "test")
            records.append({"id": f"e{i}", "labels": [i % 2], "split": split, "duration_s": 1.0})
        manifest = store.load_manifest(write_manifest(tmp_path, records))
        assert manifest.split_counts() == {"train": 6, "dev": 2, "test": 2}
        assert manifest.split_ratio() == "6:2:2"

    def test_duplicate_id_rejected(self, tmp_path):
        records = [
            {"id": "same", "labels": [0], "split": "train", "duration_s": 1.0},
            {"id": "same", "labels": [1], "split": "dev", "duration_s": 1.0},
        ]
        with pytest.raises(ValidationError):
            store.load_manifest(write_manifest(tmp_path, records))

    def test_label_out_of_range_rejected(self, tmp_path):
        records = [{"id": "e", "labels": [5], "split": "train", "duration_s": 1.0}]
        with pytest.raises(ValidationError):
            store.load_manifest(write_manifest(tmp_path, records))

    def test_single_label_task_needs_exactly_one_label(self, tmp_path):
        records = [{"id": "e", "labels": [0, 1], "split": "train", "duration_s": 1.0}]
        with pytest.raises(ValidationError):
            store.load_manifest(write_manifest(tmp_path, records))

    def test_multi_label_allows_empty_labels(self, tmp_path):
        records = [{"id": "e", "labels": [], "split": "test", "duration_s": 2.0}]
        manifest = store.load_manifest(
            write_manifest(tmp_path, records, task_kind=store.MULTI_LABEL)
        )
        assert manifest.records[0].labels == ()

    def test_empty_file_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            store.load_manifest(write_manifest(tmp_path, []))

    def test_load_is_order_preserving_and_idempotent(self, tmp_path):
        records = [
            {"id": f"e{i}", "labels": [i % 2], "split": "train", "duration_s": 1.0}
            for i in range(5)
        ]
        path = write_manifest(tmp_path, records)
        first = store.load_manifest(path)
        second = store.load_manifest(path)
        assert [r.example_id for r in first.records] == [f"e{i}" for i in range(5)]
        assert first == second

    def test_save_load_roundtrip(self, tmp_path):
        space = store.LabelSpace(task_kind=store.SINGLE_LABEL, label_names=("x", "y"))
        manifest = store.DatasetManifest(
            dataset_name="demo",
            label_space=space,
            records=(
                store.ExampleRecord("a", (0,), "train", 1.5),
                store.ExampleRecord("b", (1,), "test", 0.5),
            ),
        )
        path = tmp_path / "demo.jsonl"
        store.save_manifest(manifest, path)
        assert store.load_manifest(path) == manifest
