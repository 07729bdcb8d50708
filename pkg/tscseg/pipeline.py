"""Конвейер обучения: автоэнкодер → стандартизация → кандидаты → иерархия."""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np

from .autoencoder import ae_random_search, ae_train
from .core_model import Demonstration, standardize_fit
from .errors import DimensionMismatch, EmptyDataset, TscsegError
from .hier_tsc import assign_transition_labels, collect_candidates, fit_hierarchy, prune_clusters
from .schemas import TrainingConfig
from .storage import ModelBundle

logger = logging.getLogger(__name__)


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Добавляет имя стадии к сообщению ошибки, не меняя её класс."""
    try:
        yield
    except TscsegError as e:
        raise e.with_stage(name)


def autoencoder_frames(demos: Sequence[Demonstration], max_frames: int) -> np.ndarray:
    """Визуальные кадры для обучения автоэнкодера с равномерным прореживанием до max_frames."""
    visual = np.vstack([demo.visual for demo in demos])
    stride = max(1, math.ceil(visual.shape[0] / max_frames))
    return visual[::stride]


def train_bundle(demos: Sequence[Demonstration], cfg: TrainingConfig, dataset_fingerprint: str = "") -> ModelBundle:
    """
    Обучает модель на демонстрациях.

    Raises:
        TscsegError: ошибки модулей с именем стадии в сообщении
    """
    if not demos:
        raise EmptyDataset("Нет демонстраций для обучения").with_stage("train")
    visual_dims = {demo.visual_dim for demo in demos}
    if len(visual_dims) != 1:
        raise DimensionMismatch(f"Размерности визуальных признаков различаются: {sorted(visual_dims)}").with_stage("train")

    with stage("train:autoencoder"):
        visual_dim = visual_dims.pop()
        if visual_dim != cfg.autoencoder.input_dim:
            raise DimensionMismatch(
                f"input_dim автоэнкодера {cfg.autoencoder.input_dim}, а визуальные признаки имеют размерность {visual_dim}"
            )
        frames = autoencoder_frames(demos, cfg.ae_max_frames)
        logger.info(f"Обучение автоэнкодера на {frames.shape[0]} кадрах")
        if cfg.ae_search_trials > 0:
            encoder, ae_cfg = ae_random_search(frames, cfg.autoencoder, cfg.ae_search_trials, cfg.seed)
            cfg = cfg.model_copy(update={"autoencoder": ae_cfg})
        else:
            encoder = ae_train(frames, cfg.autoencoder)

    with stage("train:standardizer"):
        standardizer = standardize_fit(demos)

    with stage("train:candidates"):
        candidates = collect_candidates(demos, cfg.tsc, standardizer, encoder)
        logger.info(f"Кандидатов в переходы: {len(candidates)}")

    with stage("train:hierarchy"):
        hierarchy = fit_hierarchy(candidates, cfg.tsc, standardizer, encoder)
    with stage("train:prune"):
        hierarchy = prune_clusters(hierarchy, demos, cfg.tsc)
    with stage("train:label"):
        hierarchy = assign_transition_labels(hierarchy, demos)

    logger.info(f"Размечено переходов: {', '.join(hierarchy.assigned_labels)}")
    return ModelBundle(hierarchy=hierarchy, training_config=cfg, dataset_fingerprint=dataset_fingerprint)
