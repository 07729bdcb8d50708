"""Тесты конвейера обучения."""

import numpy as np
import pytest
from conftest import small_training_config

from tscseg.errors import DimensionMismatch, EmptyDataset
from tscseg.pipeline import autoencoder_frames, train_bundle
from tscseg.schemas import AutoencoderConfig, DEFAULT_CANONICAL_ORDER
from tscseg.storage import bundle_bytes


def _is_subsequence(labels, order) -> bool:
    it = iter(order)
    return all(label in it for label in labels)


class TestTrainBundle:
    def test_bundle_is_labeled(self, trained_bundle):
        h = trained_bundle.hierarchy
        assert h.is_labeled
        assert h.encoder is not None
        assert h.assigned_labels
        assert _is_subsequence(h.assigned_labels, DEFAULT_CANONICAL_ORDER)
        assert trained_bundle.dataset_fingerprint

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset, match=r"\[train\]"):
            train_bundle([], small_training_config())

    def test_autoencoder_dimension_mismatch_names_stage(self, small_dataset):
        demos, _ = small_dataset
        cfg = small_training_config()
        cfg = cfg.model_copy(update={"autoencoder": AutoencoderConfig()})
        with pytest.raises(DimensionMismatch, match=r"^\[train:autoencoder\]"):
            train_bundle(demos[:2], cfg)

    def test_deterministic(self, small_dataset):
        demos, _ = small_dataset
        first = train_bundle(demos[:4], small_training_config())
        second = train_bundle(demos[:4], small_training_config())
        assert bundle_bytes(first) == bundle_bytes(second)


class TestAutoencoderFrames:
    def test_stride(self, small_dataset):
        demos, _ = small_dataset
        total = sum(d.num_frames for d in demos)
        frames = autoencoder_frames(demos, 100)
        assert frames.shape[0] <= 100
        np.testing.assert_array_equal(frames[0], demos[0].visual[0])
        assert autoencoder_frames(demos, total).shape[0] == total
