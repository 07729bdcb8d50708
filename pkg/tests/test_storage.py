"""Тесты файловых форматов: CSV, манифест, директивы и файл модели."""

import logging
from dataclasses import replace

import numpy as np
import orjson
import pytest

from tscseg.core_model import SegmentTrack
from tscseg.errors import ModelFormatError, ValidationFailed
from tscseg.hier_tsc import segment_demonstration
from tscseg.schemas import DatasetSplit
from tscseg.simgen import default_directives
from tscseg.storage import (
    annotations_to_csv_bytes,
    bundle_bytes,
    bundle_payload,
    demo_to_csv_bytes,
    directives_to_bytes,
    load_bundle,
    load_dataset,
    load_directives,
    read_annotations,
    read_demo_csv,
    save_bundle,
    save_dataset,
)
from tscseg.utils import decode_array, encode_array


class TestDemoFiles:
    def test_csv_round_trip(self, tmp_path, small_dataset):
        demos, _ = small_dataset
        demo = demos[0]
        path = tmp_path / "demo.csv"
        path.write_bytes(demo_to_csv_bytes(demo))
        loaded = read_demo_csv(path, demo.id)
        np.testing.assert_array_equal(loaded.kinematics[:, :9], demo.kinematics[:, :9])
        np.testing.assert_allclose(loaded.kinematics, demo.kinematics, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(loaded.visual, demo.visual)
        np.testing.assert_array_equal(loaded.time_index, demo.time_index)

    def test_header(self, small_dataset):
        demos, _ = small_dataset
        header = demo_to_csv_bytes(demos[0]).split(b"\n", 1)[0].decode()
        assert header.startswith("t,px,py,pz,vx,vy,vz,wx,wy,wz,qw,qx,qy,qz,g,f000,")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,x,y\n0,1,2\n")
        with pytest.raises(ValidationFailed):
            read_demo_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_demo_csv(tmp_path / "absent.csv")

    def test_annotations_round_trip(self, tmp_path, small_dataset):
        demos, _ = small_dataset
        track = demos[0].annotations
        path = tmp_path / "labels.csv"
        path.write_bytes(annotations_to_csv_bytes(track))
        assert read_annotations(path) == track


class TestDataset:
    def test_load_saved_dataset(self, dataset_dir, small_dataset):
        demos, manifest = small_dataset
        dataset = load_dataset(dataset_dir)
        assert [d.id for d in dataset.split("train")] == manifest.split.train
        assert [d.id for d in dataset.split("test")] == manifest.split.test
        assert len(dataset.split("all")) == len(demos)
        assert dataset.split("train")[0].annotations == demos[0].annotations
        assert dataset.directives_path == dataset_dir / "directives.json"

    def test_fingerprint_stable(self, dataset_dir):
        assert load_dataset(dataset_dir).fingerprint == load_dataset(dataset_dir).fingerprint

    def test_unknown_split(self, dataset_dir):
        with pytest.raises(ValidationFailed):
            load_dataset(dataset_dir).split("validation")

    def test_empty_train_with_test_rejected(self, dataset_dir, small_dataset):
        _, manifest = small_dataset
        dataset = load_dataset(dataset_dir)
        split = DatasetSplit(train=[], test=manifest.split.test)
        dataset = replace(dataset, manifest=dataset.manifest.model_copy(update={"split": split}))
        with pytest.raises(ValidationFailed, match="тестовая"):
            dataset.split("train")

    def test_no_split_trains_on_everything(self, dataset_dir, small_dataset, caplog):
        demos, _ = small_dataset
        dataset = load_dataset(dataset_dir)
        dataset = replace(dataset, manifest=dataset.manifest.model_copy(update={"split": DatasetSplit()}))
        with caplog.at_level(logging.WARNING, logger="tscseg.storage"):
            assert len(dataset.split("train")) == len(demos)
        assert "⚠️" in caplog.text

    @pytest.mark.parametrize("segment_count, loads", [(10, True), (9, False)])
    def test_segment_count_from_manifest(self, tmp_path, small_dataset, segment_count, loads):
        demos, manifest = small_dataset
        demo = demos[0]
        labels = [f"S{1 + i * 10 // demo.num_frames}" for i in range(demo.num_frames)]
        demo = demo.with_annotations(SegmentTrack.from_labels(labels, segment_count=10))
        manifest = manifest.model_copy(
            update={
                "demos": [manifest.demos[0]],
                "split": DatasetSplit(train=[demo.id]),
                "segment_count": segment_count,
                "directives": None,
            }
        )
        save_dataset(tmp_path, [demo], manifest)
        if loads:
            assert len(set(load_dataset(tmp_path).demos[demo.id].annotations.labels)) == 10
        else:
            with pytest.raises(ValidationFailed, match="labels.csv"):
                load_dataset(tmp_path)

    def test_missing_manifest_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest.json"):
            load_dataset(tmp_path)


class TestDirectives:
    def test_round_trip(self, tmp_path):
        directives = {**default_directives(), "T8": None}
        path = tmp_path / "directives.json"
        path.write_bytes(directives_to_bytes(directives))
        loaded = load_directives(path)
        assert loaded["T8"] is None
        assert loaded["T1"] == directives["T1"]

    def test_invalid_entry(self, tmp_path):
        path = tmp_path / "directives.json"
        path.write_bytes(orjson.dumps({"T1": {"gripper": "close"}}))
        with pytest.raises(ValidationFailed, match="T1"):
            load_directives(path)


class TestModelFile:
    def test_array_blob_is_little_endian_base64(self):
        blob = encode_array(np.array([[1.0, 2.0]]))
        assert blob["dtype"] == "<f8"
        assert blob["shape"] == [1, 2]
        np.testing.assert_array_equal(decode_array(blob), [[1.0, 2.0]])

    def test_save_load_save_is_byte_identical(self, tmp_path, model_path):
        original = model_path.read_bytes()
        bundle = load_bundle(model_path)
        assert save_bundle(bundle, tmp_path / "copy.json") == original

    def test_loaded_model_segments_identically(self, model_path, trained_bundle, small_dataset):
        demos, _ = small_dataset
        loaded = load_bundle(model_path)
        expected = segment_demonstration(trained_bundle.hierarchy, demos[-1])
        assert segment_demonstration(loaded.hierarchy, demos[-1]) == expected

    def test_unknown_version(self, tmp_path, trained_bundle):
        payload = bundle_payload(trained_bundle)
        payload["format_version"] = 99
        path = tmp_path / "model.json"
        path.write_bytes(orjson.dumps(payload))
        with pytest.raises(ModelFormatError, match="99"):
            load_bundle(path)

    def test_not_a_model(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_bytes(b"not json")
        with pytest.raises(ModelFormatError):
            load_bundle(path)

    def test_corrupted_blob(self, tmp_path, trained_bundle):
        payload = orjson.loads(bundle_bytes(trained_bundle))
        payload["standardizer"]["mean"]["data"] = "%%%"
        path = tmp_path / "model.json"
        path.write_bytes(orjson.dumps(payload))
        with pytest.raises(ModelFormatError):
            load_bundle(path)
