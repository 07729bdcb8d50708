"""Общие доменные типы: кинематика, визуальные признаки, демонстрации, стандартизация."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, InvalidDemonstration, NonFinite
from .schemas import DEFAULT_SEGMENT_COUNT, KINEMATIC_DIM

logger = logging.getLogger(__name__)

KINEMATIC_COLUMNS = (
    "px", "py", "pz",
    "vx", "vy", "vz",
    "wx", "wy", "wz",
    "qw", "qx", "qy", "qz",
    "g",
)  # fmt: skip
POSITION = slice(0, 3)
LINEAR_VELOCITY = slice(3, 6)
ANGULAR_VELOCITY = slice(6, 9)
ORIENTATION = slice(9, 13)
GRIPPER = 13

DEFAULT_EPSILON_STD = 1e-8


def _frozen(array: np.ndarray) -> np.ndarray:
    """Возвращает копию массива, доступную только для чтения."""
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def canonical_quaternions(quaternions: np.ndarray) -> np.ndarray:
    """
    Нормирует кватернионы (w, x, y, z) и приводит знак к w >= 0.

    Raises:
        ValueError: если встретился кватернион нулевой длины
    """
    q = np.atleast_2d(np.asarray(quaternions, dtype=np.float64))
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("кватернион нулевой длины")
    q = q / norms
    # двойное покрытие SO(3): q и -q задают один поворот
    q = np.where(q[:, :1] < 0, -q, q)
    return q


@dataclass(frozen=True, slots=True)
class KinematicFeatures:
    """Кинематика инструмента в один момент времени (14 компонент)."""

    tip_position: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    tool_orientation: np.ndarray
    gripper_angle: float

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "KinematicFeatures":
        """Собирает кинематику из плоского 14-вектора с нормировкой кватерниона."""
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (KINEMATIC_DIM,):
            raise DimensionMismatch(f"Ожидался кинематический вектор размера {KINEMATIC_DIM}, получено {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFinite("Кинематический вектор содержит NaN/Inf")
        try:
            quaternion = canonical_quaternions(v[ORIENTATION])[0]
        except ValueError as e:
            raise InvalidDemonstration(f"Некорректная ориентация инструмента: {e}") from e
        return cls(
            tip_position=_frozen(v[POSITION]),
            linear_velocity=_frozen(v[LINEAR_VELOCITY]),
            angular_velocity=_frozen(v[ANGULAR_VELOCITY]),
            tool_orientation=_frozen(quaternion),
            gripper_angle=float(v[GRIPPER]),
        )

    def flatten(self) -> np.ndarray:
        """Плоский 14-вектор в порядке столбцов CSV."""
        return np.concatenate(
            [
                self.tip_position,
                self.linear_velocity,
                self.angular_velocity,
                self.tool_orientation,
                [self.gripper_angle],
            ]
        )


@dataclass(frozen=True, slots=True)
class VisualFeatures:
    """Вектор визуальных признаков (сырой 512 или закодированный 128)."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, slots=True)
class StateVector:
    """Состояние τ(t) = (k(t), v(t))."""

    time_index: int
    kinematic: KinematicFeatures
    visual: VisualFeatures

    def concatenated(self) -> np.ndarray:
        """Конкатенация кинематики и визуальных признаков (14 + D)."""
        return np.concatenate([self.kinematic.flatten(), self.visual.values])


def transition_label_for(segment_label: str) -> str:
    """Метка перехода, ведущего в сегмент ``S<j>``: ``T<j-1>``."""
    if segment_label.startswith("S") and segment_label[1:].isdigit():
        return f"T{int(segment_label[1:]) - 1}"
    return f"->{segment_label}"


@dataclass(frozen=True, slots=True)
class SegmentTrack:
    """Покадровые метки сегментов и список событий-переходов."""

    labels: tuple[str, ...]
    transition_events: tuple[tuple[int, str], ...]
    start_index: int = 0

    @classmethod
    def from_labels(
        cls, labels: Iterable[str], start_index: int = 0, segment_count: int = DEFAULT_SEGMENT_COUNT
    ) -> "SegmentTrack":
        """
        Строит трек по покадровым меткам.

        Событие возникает ровно там, где labels[t] != labels[t-1].
        """
        labels = tuple(str(label) for label in labels)
        if len(set(labels)) > segment_count:
            raise InvalidDemonstration(
                f"Различных сегментов {len(set(labels))}, а объявлено не больше {segment_count}"
            )
        events = tuple(
            (start_index + i, transition_label_for(labels[i]))
            for i in range(1, len(labels))
            if labels[i] != labels[i - 1]
        )
        return cls(labels=labels, transition_events=events, start_index=start_index)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def event_labels(self) -> list[str]:
        return [label for _, label in self.transition_events]


@dataclass(frozen=True, eq=False)
class Demonstration:
    """
    Одна демонстрация: T состояний с частотой дискретизации.

    Кинематика и визуальные признаки хранятся массивами (T, 14) и (T, D)
    только для чтения; объекты StateVector создаются по требованию.
    """

    id: str
    sample_rate_hz: float
    time_index: np.ndarray
    kinematics: np.ndarray
    visual: np.ndarray
    annotations: SegmentTrack | None = field(default=None)

    @classmethod
    def from_arrays(
        cls,
        demo_id: str,
        sample_rate_hz: float,
        kinematics: np.ndarray,
        visual: np.ndarray,
        time_index: Sequence[int] | None = None,
        annotations: SegmentTrack | None = None,
        visual_dim: int | None = None,
    ) -> "Demonstration":
        """
        Приём демонстрации с проверкой всех инвариантов.

        Raises:
            InvalidDemonstration: нарушен инвариант (с указанием id и индекса времени)
            NonFinite: встретились NaN/Inf
            DimensionMismatch: размерности не совпадают с ожидаемыми
        """
        kin = np.asarray(kinematics, dtype=np.float64)
        vis = np.asarray(visual, dtype=np.float64)
        if kin.ndim != 2 or kin.shape[1] != KINEMATIC_DIM:
            raise DimensionMismatch(f"Демонстрация {demo_id}: кинематика должна иметь форму (T, 14), получено {kin.shape}")
        if vis.ndim != 2 or vis.shape[0] != kin.shape[0]:
            raise DimensionMismatch(
                f"Демонстрация {demo_id}: визуальные признаки формы {vis.shape} не согласованы с T={kin.shape[0]}"
            )
        if visual_dim is not None and vis.shape[1] != visual_dim:
            raise DimensionMismatch(
                f"Демонстрация {demo_id}: размерность визуальных признаков {vis.shape[1]}, в манифесте {visual_dim}"
            )
        if not sample_rate_hz > 0:
            raise InvalidDemonstration(f"Демонстрация {demo_id}: частота дискретизации должна быть положительной")

        num_frames = kin.shape[0]
        times = np.arange(num_frames, dtype=np.int64) if time_index is None else np.asarray(time_index, dtype=np.int64)
        if num_frames < 2:
            raise InvalidDemonstration(f"Демонстрация {demo_id}: нужно T >= 2, получено {num_frames}")
        if times.shape != (num_frames,):
            raise InvalidDemonstration(f"Демонстрация {demo_id}: длина индексов времени не равна T")
        if times[0] < 0:
            raise InvalidDemonstration(f"Демонстрация {demo_id}: отрицательный индекс времени {times[0]}")
        steps = np.diff(times)
        if np.any(steps != 1):
            bad = int(np.flatnonzero(steps != 1)[0]) + 1
            raise InvalidDemonstration(f"Демонстрация {demo_id}: индексы времени не идут подряд у t={int(times[bad])}")

        for name, array in (("кинематика", kin), ("визуальные признаки", vis)):
            finite_rows = np.all(np.isfinite(array), axis=1)
            if not np.all(finite_rows):
                bad = int(np.flatnonzero(~finite_rows)[0])
                raise NonFinite(f"Демонстрация {demo_id}: {name} содержит NaN/Inf при t={int(times[bad])}")

        norms = np.linalg.norm(kin[:, ORIENTATION], axis=1)
        if np.any(norms < 1e-12):
            bad = int(np.flatnonzero(norms < 1e-12)[0])
            raise InvalidDemonstration(f"Демонстрация {demo_id}: нулевой кватернион при t={int(times[bad])}")
        kin = kin.copy()
        kin[:, ORIENTATION] = canonical_quaternions(kin[:, ORIENTATION])

        if annotations is not None and len(annotations) != num_frames:
            raise InvalidDemonstration(
                f"Демонстрация {demo_id}: разметка содержит {len(annotations)} кадров, а T={num_frames}"
            )

        frozen_times = times.copy()
        frozen_times.setflags(write=False)
        return cls(
            id=str(demo_id),
            sample_rate_hz=float(sample_rate_hz),
            time_index=frozen_times,
            kinematics=_frozen(kin),
            visual=_frozen(vis),
            annotations=annotations,
        )

    @property
    def num_frames(self) -> int:
        return int(self.kinematics.shape[0])

    @property
    def visual_dim(self) -> int:
        return int(self.visual.shape[1])

    def state(self, i: int) -> StateVector:
        """Состояние номер i (позиция в массиве, не индекс времени)."""
        return StateVector(
            time_index=int(self.time_index[i]),
            kinematic=KinematicFeatures.from_vector(self.kinematics[i]),
            visual=VisualFeatures(self.visual[i]),
        )

    @property
    def states(self) -> Iterator[StateVector]:
        return (self.state(i) for i in range(self.num_frames))

    def with_annotations(self, annotations: SegmentTrack) -> "Demonstration":
        """Копия демонстрации с другой разметкой."""
        if len(annotations) != self.num_frames:
            raise InvalidDemonstration(f"Демонстрация {self.id}: длина разметки не совпадает с T")
        return Demonstration(self.id, self.sample_rate_hz, self.time_index, self.kinematics, self.visual, annotations)


@dataclass(frozen=True, slots=True, eq=False)
class Standardizer:
    """Поэлементная z-нормировка кинематики."""

    mean: np.ndarray
    std: np.ndarray
    epsilon_std: float = DEFAULT_EPSILON_STD

    def apply(self, kinematic: KinematicFeatures | np.ndarray) -> np.ndarray:
        """z = (k - mean) / std для одного вектора."""
        vector = kinematic.flatten() if isinstance(kinematic, KinematicFeatures) else np.asarray(kinematic, dtype=np.float64)
        if vector.shape != (KINEMATIC_DIM,):
            raise DimensionMismatch(f"Ожидался вектор размера {KINEMATIC_DIM}, получено {vector.shape}")
        if not np.all(np.isfinite(vector)):
            raise NonFinite("Кинематический вектор содержит NaN/Inf")
        return (vector - self.mean) / self.std

    def apply_batch(self, kinematics: np.ndarray) -> np.ndarray:
        """z-нормировка матрицы (N, 14)."""
        matrix = np.asarray(kinematics, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != KINEMATIC_DIM:
            raise DimensionMismatch(f"Ожидалась матрица (N, {KINEMATIC_DIM}), получено {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise NonFinite("Кинематическая матрица содержит NaN/Inf")
        return (matrix - self.mean) / self.std

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        """Обратное преобразование x·std + mean."""
        return np.asarray(standardized, dtype=np.float64) * self.std + self.mean


def standardize_fit(demos: Iterable[Demonstration], epsilon_std: float = DEFAULT_EPSILON_STD) -> Standardizer:
    """
    Оценивает среднее и популяционное СКО по всем кинематическим векторам.

    Raises:
        EmptyDataset: если состояний нет
        NonFinite: если во входе есть NaN/Inf
    """
    blocks = [demo.kinematics for demo in demos]
    if not blocks or sum(block.shape[0] for block in blocks) == 0:
        raise EmptyDataset("Нет ни одного кинематического вектора для стандартизации")
    stacked = np.vstack(blocks)
    if not np.all(np.isfinite(stacked)):
        raise NonFinite("Кинематика содержит NaN/Inf")
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), epsilon_std)
    clamped = int(np.sum(stacked.std(axis=0) < epsilon_std))
    if clamped:
        logger.debug(f"Стандартизация: {clamped} измерений с нулевой дисперсией ограничены epsilon_std")
    return Standardizer(mean=_frozen(mean), std=_frozen(std), epsilon_std=float(epsilon_std))


def standardize_apply(standardizer: Standardizer, kinematic: KinematicFeatures | np.ndarray) -> np.ndarray:
    """Применяет обученную стандартизацию к одному вектору."""
    return standardizer.apply(kinematic)
