"""Общие фикстуры: маленький синтетический набор и обученная на нём модель."""

import numpy as np
import pytest

from tscseg.core_model import Demonstration, standardize_fit
from tscseg.gmm import GmmModel
from tscseg.hier_tsc import build_hierarchy
from tscseg.pipeline import train_bundle
from tscseg.schemas import AutoencoderConfig, GmmFitConfig, SimConfig, TrainingConfig, TscConfig
from tscseg.simgen import default_directives, generate_dataset
from tscseg.storage import load_dataset, save_bundle, save_dataset

RAW_DIM = 16
LATENT_DIM = 8


def small_sim_config(**overrides) -> SimConfig:
    """Уменьшенная размерность визуальных признаков, чтобы набор тестов работал быстро."""
    params = {"num_demos": 6, "raw_dim": RAW_DIM, "latent_dim": LATENT_DIM, "split": [4, 2], "seed": 3}
    params.update(overrides)
    return SimConfig(**params)


def small_training_config() -> TrainingConfig:
    return TrainingConfig(
        autoencoder=AutoencoderConfig(
            input_dim=RAW_DIM,
            latent_dim=LATENT_DIM,
            encoder_hidden=[12],
            decoder_hidden=[12],
            learning_rate=3e-3,
            max_epochs=40,
            early_stop_patience=10,
        ),
        tsc=TscConfig(visual_k_max=6, kinematic_k_max=3, gmm=GmmFitConfig(num_restarts=2)),
        ae_max_frames=1024,
    )


def make_demo(kinematics: np.ndarray, visual: np.ndarray | None = None, demo_id: str = "demo") -> Demonstration:
    """Демонстрация из кинематики; визуальные признаки по умолчанию нулевые (2 измерения)."""
    if visual is None:
        visual = np.zeros((kinematics.shape[0], 2))
    return Demonstration.from_arrays(demo_id, 30.0, kinematics, visual)


def rest_kinematics(num_frames: int) -> np.ndarray:
    """Неподвижный инструмент: нулевая кинематика и единичный кватернион."""
    kin = np.zeros((num_frames, 14))
    kin[:, 9] = 1.0
    return kin


def spherical_gmm(means, variance: float = 1.0) -> GmmModel:
    """Смесь с равными весами и сферическими ковариациями."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    k, d = means.shape
    return GmmModel(weights=np.full(k, 1.0 / k), means=means, covariances=np.stack([np.eye(d) * variance] * k))


@pytest.fixture
def sim_config():
    return small_sim_config()


@pytest.fixture(scope="session")
def small_dataset():
    """(демонстрации, манифест) маленького набора."""
    return generate_dataset(small_sim_config())


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_dataset):
    root = tmp_path_factory.mktemp("dataset")
    demos, manifest = small_dataset
    save_dataset(root, demos, manifest, default_directives())
    return root


@pytest.fixture(scope="session")
def raw_hierarchy(small_dataset):
    """Размеченная иерархия без автоэнкодера, построенная на сырых визуальных признаках."""
    demos, _ = small_dataset
    cfg = small_training_config().tsc
    return build_hierarchy(demos, cfg, standardize_fit(demos))


@pytest.fixture(scope="session")
def trained_bundle(dataset_dir):
    dataset = load_dataset(dataset_dir)
    return train_bundle(dataset.split("train"), small_training_config(), dataset.fingerprint)


@pytest.fixture(scope="session")
def model_path(tmp_path_factory, trained_bundle):
    path = tmp_path_factory.mktemp("model") / "model.json"
    save_bundle(trained_bundle, path)
    return path
