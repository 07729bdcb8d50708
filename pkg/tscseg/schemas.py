"""Модуль с Pydantic схемами: конфигурации, манифест, директивы и отчёты."""

from __future__ import annotations

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

KINEMATIC_DIM = 14
DEFAULT_CANONICAL_ORDER = [f"T{i}" for i in range(1, 9)]
DEFAULT_SEGMENT_COUNT = 9


class StrictModel(BaseModel):
    """Базовая модель конфигурации: неизвестные ключи запрещены."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class AutoencoderConfig(StrictModel):
    """Параметры полносвязного автоэнкодера визуальных признаков."""

    input_dim: int = Field(512, ge=1)
    latent_dim: int = Field(128, ge=1)
    encoder_hidden: List[int] = Field(default_factory=lambda: [256, 256, 448])
    decoder_hidden: List[int] = Field(default_factory=lambda: [448, 256, 256])
    learning_rate: float = Field(1e-3, gt=0)
    rmsprop_decay: float = Field(0.9, ge=0, lt=1)
    rmsprop_epsilon: float = Field(1e-8, gt=0)
    batch_size: int = Field(64, ge=1)
    max_epochs: int = Field(200, ge=1)
    early_stop_patience: int = Field(20, ge=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    seed: int = 0

    @field_validator("encoder_hidden", "decoder_hidden")
    @classmethod
    def widths_positive(cls, value: List[int]) -> List[int]:
        """Все ширины слоёв должны быть положительными."""
        if any(width <= 0 for width in value):
            raise ValueError(f"Ширины слоёв должны быть положительными: {value}")
        return value

    @model_validator(mode="after")
    def latent_smaller_than_input(self):
        """Латентное пространство должно быть меньше входного."""
        if self.latent_dim >= self.input_dim:
            raise ValueError(f"latent_dim ({self.latent_dim}) должен быть меньше input_dim ({self.input_dim})")
        return self


class GmmFitConfig(StrictModel):
    """Параметры EM для одной смеси."""

    max_iterations: int = Field(300, ge=1)
    ll_tolerance: float = Field(1e-6, gt=0)
    covariance_regularization: float = Field(1e-6, gt=0)
    num_restarts: int = Field(5, ge=1)
    seed: int = 0


class TscConfig(StrictModel):
    """Параметры детектора переходов и иерархической кластеризации."""

    dynamics_window: int = Field(5, ge=2)
    # "auto": среднее + threshold_sigma·std невязок демонстрации, либо фиксированное число
    residual_threshold: float | Literal["auto"] = "auto"
    threshold_sigma: float = Field(2.0, gt=0)
    residual_floor: float = Field(1e-6, ge=0)
    merge_window: int = Field(3, ge=1)
    min_demo_fraction: float = Field(0.6, ge=0, le=1)
    visual_k_min: int = Field(2, ge=2)
    visual_k_max: int = Field(12, ge=2)
    kinematic_k_min: int = Field(1, ge=1)
    kinematic_k_max: int = Field(6, ge=1)
    kinematic_split_silhouette: float = Field(0.5, ge=-1, le=1)
    weak_silhouette: float = Field(0.25, ge=-1, le=1)
    covariance_regularization_fraction: float = Field(0.1, ge=0)
    cluster_all_states: bool = False
    canonical_order: List[str] = Field(default_factory=lambda: list(DEFAULT_CANONICAL_ORDER))
    gmm: GmmFitConfig = Field(default_factory=GmmFitConfig)

    @model_validator(mode="after")
    def check_ranges(self):
        """Проверяет согласованность диапазонов k и порога."""
        if self.visual_k_min > self.visual_k_max:
            raise ValueError("visual_k_min больше visual_k_max")
        if self.kinematic_k_min > self.kinematic_k_max:
            raise ValueError("kinematic_k_min больше kinematic_k_max")
        if not isinstance(self.residual_threshold, str) and self.residual_threshold <= 0:
            raise ValueError("Фиксированный residual_threshold должен быть положительным")
        if len(set(self.canonical_order)) != len(self.canonical_order) or not self.canonical_order:
            raise ValueError("canonical_order должен быть непустым и без повторов")
        return self


class OnlineConfig(StrictModel):
    """Параметры потокового сегментатора."""

    hysteresis: int = Field(3, ge=1)
    posterior_floor: float = Field(0.6, gt=0, lt=1)
    out_of_order_policy: Literal["suppress", "emit_with_flag"] = "suppress"
    # сколько последних кадров хранится для статистики задержек
    latency_history: int = Field(100_000, ge=1)


class SimConfig(StrictModel):
    """Параметры генератора синтетических демонстраций pick-and-place."""

    num_demos: int = Field(14, ge=1)
    sample_rate_hz: float = Field(30.0, gt=0)
    # Номинальные длительности сегментов S1..S9 в кадрах
    segment_durations: List[int] = Field(default_factory=lambda: [45, 30, 60, 30, 45, 45, 30, 60, 30])
    duration_jitter: float = Field(0.2, ge=0, lt=1)
    kinematic_noise_std: float = Field(0.002, ge=0)
    # четыре визуальные моды задаются ортогональными векторами
    latent_dim: int = Field(128, ge=4)
    raw_dim: int = Field(512, ge=4)
    # Отношение расстояния между модами к среднеквадратичному радиусу моды
    visual_separation: float = Field(6.0, gt=0)
    visual_noise_radius: float = Field(1.0, ge=0)
    raw_noise_radius: float = Field(0.5, ge=0)
    spurious_jitter_rate: float = Field(0.0, ge=0)
    spurious_jitter_magnitude: float = Field(0.3, ge=0)
    split: Optional[List[int]] = None
    seed: int = 0

    @field_validator("segment_durations")
    @classmethod
    def durations_positive(cls, value: List[int]) -> List[int]:
        """Сценарий фиксирован: ровно 9 сегментов положительной длины."""
        if len(value) != 9:
            raise ValueError(f"Сценарий pick-and-place содержит 9 сегментов, получено {len(value)}")
        if any(duration < 4 for duration in value):
            raise ValueError(f"Длительности сегментов должны быть не меньше 4 кадров: {value}")
        return value

    @model_validator(mode="after")
    def check_split(self):
        """Разбиение train/test должно покрывать все демонстрации."""
        if self.split is not None:
            if len(self.split) != 2 or min(self.split) < 0 or sum(self.split) != self.num_demos:
                raise ValueError(f"split {self.split} не согласован с num_demos={self.num_demos}")
        return self

    def resolved_split(self) -> tuple[int, int]:
        """Возвращает (train, test); по умолчанию 9/5 для 14 демонстраций."""
        if self.split is not None:
            return self.split[0], self.split[1]
        test = int(round(self.num_demos * 5 / 14))
        if self.num_demos > 1:
            test = min(max(test, 1), self.num_demos - 1)
        else:
            test = 0
        return self.num_demos - test, test


class TrainingConfig(StrictModel):
    """Полная конфигурация обучения (файл --config)."""

    autoencoder: AutoencoderConfig = Field(default_factory=AutoencoderConfig)
    tsc: TscConfig = Field(default_factory=TscConfig)
    online: OnlineConfig = Field(default_factory=OnlineConfig)
    ae_max_frames: int = Field(2048, ge=1)
    ae_search_trials: int = Field(0, ge=0)
    seed: int = 0

    def with_seed(self, seed: int) -> "TrainingConfig":
        """Возвращает копию, где все генераторы засеяны от общего seed."""
        update = self.model_copy(deep=True)
        update.seed = seed
        update.autoencoder.seed = seed
        update.tsc.gmm.seed = seed
        return update


class AssistanceDirective(BaseModel):
    """Директива ассистирования: целевая ориентация инструмента и команда схвата."""

    model_config = ConfigDict(frozen=True)

    transition: str
    target_orientation: List[float] = Field(..., min_length=4, max_length=4)
    gripper_command: Literal["open", "close", "hold"] = "hold"

    @field_validator("target_orientation")
    @classmethod
    def normalize_quaternion(cls, value: List[float]) -> List[float]:
        """Нормирует кватернион (w, x, y, z); нулевой кватернион недопустим."""
        q = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(q)):
            raise ValueError("Кватернион содержит NaN/Inf")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise ValueError("Нулевой кватернион нельзя нормировать")
        q = q / norm
        if q[0] < 0:
            q = -q
        return [float(v) for v in q]


class DemoEntry(BaseModel):
    """Запись о демонстрации в манифесте."""

    id: str = Field(..., min_length=1)
    file: str
    annotations: Optional[str] = None
    num_frames: Optional[int] = None


class DatasetSplit(BaseModel):
    """Разбиение на обучающую и тестовую части."""

    train: List[str] = Field(default_factory=list)
    test: List[str] = Field(default_factory=list)


class DatasetManifest(BaseModel):
    """Манифест набора демонстраций."""

    format_version: int = 1
    demos: List[DemoEntry]
    visual_dim: int = Field(..., ge=1)
    sample_rate_hz: float = Field(..., gt=0)
    split: DatasetSplit = Field(default_factory=DatasetSplit)
    generator_seed: Optional[int] = None
    generator: Optional[dict] = None
    directives: Optional[str] = None
    # число различных сегментов в разметке
    segment_count: int = Field(DEFAULT_SEGMENT_COUNT, ge=2)

    @model_validator(mode="after")
    def check_split_ids(self):
        """Идентификаторы разбиения должны ссылаться на демонстрации манифеста."""
        ids = {entry.id for entry in self.demos}
        if len(ids) != len(self.demos):
            raise ValueError("Идентификаторы демонстраций в манифесте повторяются")
        unknown = [demo_id for demo_id in self.split.train + self.split.test if demo_id not in ids]
        if unknown:
            raise ValueError(f"Разбиение ссылается на неизвестные демонстрации: {unknown}")
        return self


class KinematicLevelDiagnostics(BaseModel):
    """Диагностика кинематического уровня для одного визуального кластера."""

    visual_cluster: int
    members: int
    k: int
    score: Optional[float] = None
    curve: Dict[str, float] = Field(default_factory=dict)
    reason: str = "silhouette"


class PrunedCluster(BaseModel):
    """Подкластер, отброшенный при прореживании."""

    visual_cluster: int
    kinematic_cluster: int
    demos_covered: int
    demos_required: int


class HierarchyDiagnostics(BaseModel):
    """Отчёт о построении иерархии (кривые силуэта, прореживание, разметка)."""

    candidates: int = 0
    visual_k: int = 0
    visual_score: Optional[float] = None
    visual_curve: Dict[str, float] = Field(default_factory=dict)
    weak_visual_silhouette: bool = False
    visual_regularization: float = 0.0
    kinematic: List[KinematicLevelDiagnostics] = Field(default_factory=list)
    pruned: List[PrunedCluster] = Field(default_factory=list)
    survivors: int = 0
    canonical_count: int = 0
    count_mismatch: bool = False
    extras: List[str] = Field(default_factory=list)


class LatencyRow(BaseModel):
    """Строка таблицы задержек (миллисекунды)."""

    stage: str
    mean_ms: float
    min_ms: float
    p99_ms: float
    samples: int


class LatencyTable(BaseModel):
    """Таблица задержек онлайн-сегментации по стадиям."""

    rows: List[LatencyRow]
    repetitions: int
    sessions: int
    frames: int
    feature_encode_included: bool = True

    def row(self, stage: str) -> LatencyRow:
        """Возвращает строку по имени стадии."""
        for item in self.rows:
            if item.stage == stage:
                return item
        raise KeyError(stage)


class TransitionMetrics(BaseModel):
    """Точность и полнота по одной метке перехода."""

    label: str
    predicted: int
    truth: int
    matched: int
    precision: float
    recall: float


class DemoEvaluation(BaseModel):
    """Результат оценки одной демонстрации."""

    demo_id: str
    frame_accuracy: float = Field(..., ge=0, le=1)
    predicted_events: List[str] = Field(default_factory=list)
    matched: int = 0
    order_violations: int = 0


class EvalReport(BaseModel):
    """Отчёт оценки сегментации (аналог таблицы точности)."""

    split: str
    demos: int
    frame_accuracy_mean: float = Field(..., ge=0, le=1)
    frame_accuracy_std: float = Field(..., ge=0)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    window: int
    per_transition: List[TransitionMetrics] = Field(default_factory=list)
    per_demo: List[DemoEvaluation] = Field(default_factory=list)
    timing_errors: List[int] = Field(default_factory=list)
    order_violations: int = 0
    latency: Optional[LatencyTable] = None
    config: dict = Field(default_factory=dict)
