"""
Потоковый сегментатор.

Покадрово: кодирование визуальных признаков, стандартизация кинематики,
вывод по двум уровням смесей, подавление дребезга (гистерезис и порог
апостериорной вероятности), проверка канонического порядка и выдача
директивы ассистирования. Задержка каждой стадии измеряется
монотонными часами.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Mapping, Optional

import numpy as np
import orjson

from .autoencoder import ae_encode
from .core_model import KinematicFeatures
from .errors import DimensionMismatch, MissingDirective, NoSamples, NonFinite, ValidationFailed
from .gmm import argmax_low, gmm_posterior
from .hier_tsc import ClusterKey, TransitionHierarchy
from .schemas import AssistanceDirective, LatencyRow, LatencyTable, OnlineConfig

logger = logging.getLogger(__name__)

FEATURE_ENCODE = "feature_encode"
KINEMATIC_STANDARDIZATION = "kinematic_standardization"
GMM_PREDICTION = "gmm_prediction"
DIRECTIVE_EMIT = "directive_emit"
TOTAL = "total"
STAGES = (FEATURE_ENCODE, KINEMATIC_STANDARDIZATION, GMM_PREDICTION, DIRECTIVE_EMIT)


@dataclass(frozen=True, slots=True)
class OnlineDecision:
    """Решение сегментатора по одному кадру."""

    time_index: int
    segment_label: str
    transition_event: Optional[str] = None
    directive: Optional[AssistanceDirective] = None
    out_of_order: bool = False
    candidate: Optional[str] = None
    visual_cluster: int = -1
    kinematic_cluster: int = -1
    stage_latencies: Dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        """JSON-запись для потокового вывода."""
        return {
            "t": self.time_index,
            "segment": self.segment_label,
            "event": self.transition_event,
            "out_of_order": self.out_of_order,
            "directive": self.directive.model_dump() if self.directive is not None else None,
            "cluster": [self.visual_cluster, self.kinematic_cluster],
            "latency_us": self.stage_latencies,
        }


class SegmenterSession:
    """
    Сессия потоковой сегментации.

    Владелец один: вызовы step должны сериализоваться снаружи.
    Иерархия и автоэнкодер не изменяются и могут обслуживать много сессий.
    """

    def __init__(
        self,
        hierarchy: TransitionHierarchy,
        directives: Mapping[str, Optional[AssistanceDirective]],
        cfg: OnlineConfig,
        encoded_input: bool = False,
    ):
        self.hierarchy = hierarchy
        self.directives = dict(directives)
        self.cfg = cfg
        self.encoded_input = encoded_input or hierarchy.encoder is None
        self._order = hierarchy.assigned_labels
        self._position = {label: i for i, label in enumerate(hierarchy.canonical_order)}
        self.segment_label = "S1"
        self.last_emitted: Optional[str] = None
        self.emitted: List[str] = []
        self.steps = 0
        self._streak_key: Optional[ClusterKey] = None
        self._streak = 0
        # хранятся только последние cfg.latency_history кадров
        self._latencies: Dict[str, Deque[float]] = {stage: deque(maxlen=cfg.latency_history) for stage in STAGES}
        self._totals: Deque[float] = deque(maxlen=cfg.latency_history)
        self.last_wire = b""

    @property
    def next_allowed(self) -> Optional[str]:
        """Непосредственный преемник последней выданной метки среди назначенных иерархией."""
        if self.last_emitted is None:
            return self._order[0] if self._order else None
        index = self._order.index(self.last_emitted)
        return self._order[index + 1] if index + 1 < len(self._order) else None

    def _segment_after(self, label: str) -> str:
        return f"S{self._position[label] + 2}"

    def _encode(self, visual: np.ndarray) -> np.ndarray:
        if self.encoded_input:
            latent = np.asarray(visual, dtype=np.float64)
            if latent.shape != (self.hierarchy.visual_model.dim,):
                raise DimensionMismatch(
                    f"Ожидался латентный вектор размерности {self.hierarchy.visual_model.dim}, получено {latent.shape}"
                )
            if not np.all(np.isfinite(latent)):
                raise NonFinite("Визуальный вектор содержит NaN/Inf")
            return latent
        return ae_encode(self.hierarchy.encoder, visual)

    def step(self, visual: np.ndarray, kinematic, time_index: Optional[int] = None) -> OnlineDecision:
        """
        Обрабатывает один кадр.

        Args:
            visual: сырой визуальный вектор (или латентный при encoded_input)
            kinematic: KinematicFeatures или плоский 14-вектор
            time_index: индекс времени кадра (по умолчанию номер шага)

        Raises:
            NonFinite: NaN/Inf во входе
            DimensionMismatch: неверная размерность
        """
        h = self.hierarchy
        t = self.steps if time_index is None else int(time_index)

        start = time.perf_counter_ns()
        latent = self._encode(visual)
        encoded = time.perf_counter_ns()
        z = h.standardizer.apply(kinematic)
        standardized = time.perf_counter_ns()
        visual_post = gmm_posterior(h.visual_model, latent)
        vi = argmax_low(visual_post)
        kinematic_post = gmm_posterior(h.kinematic_models[vi], z)
        ki = argmax_low(kinematic_post)
        predicted = time.perf_counter_ns()

        key = (vi, ki)
        candidate = h.label_map.get(key)
        confident = (
            candidate is not None
            and visual_post[vi] >= self.cfg.posterior_floor
            and kinematic_post[ki] >= self.cfg.posterior_floor
        )
        if confident and key == self._streak_key:
            self._streak += 1
        elif confident:
            self._streak_key, self._streak = key, 1
        else:
            self._streak_key, self._streak = None, 0

        event = None
        out_of_order = False
        if confident and self._streak >= self.cfg.hysteresis and candidate in self._position:
            if candidate == self.next_allowed:
                event = candidate
            elif self.cfg.out_of_order_policy == "emit_with_flag" and candidate not in self.emitted:
                event, out_of_order = candidate, True
        directive = None
        if event is not None:
            directive = self.directives.get(event)
            self.segment_label = self._segment_after(event)
            self.last_emitted = event
            self.emitted.append(event)
            self._streak_key, self._streak = None, 0
            logger.debug(f"Переход {event} на t={t}{' (вне порядка)' if out_of_order else ''}")

        # отправка директивы в выходной канал
        self.last_wire = orjson.dumps(
            {
                "t": t,
                "segment": self.segment_label,
                "event": event,
                "directive": directive.model_dump() if directive is not None else None,
            }
        )
        emitted = time.perf_counter_ns()

        latencies = {
            FEATURE_ENCODE: (encoded - start) / 1000.0,
            KINEMATIC_STANDARDIZATION: (standardized - encoded) / 1000.0,
            GMM_PREDICTION: (predicted - standardized) / 1000.0,
            DIRECTIVE_EMIT: (emitted - predicted) / 1000.0,
        }
        for stage, value in latencies.items():
            self._latencies[stage].append(value)
        self._totals.append(sum(v for s, v in latencies.items() if s != FEATURE_ENCODE or not self.encoded_input))
        self.steps += 1
        return OnlineDecision(
            time_index=t,
            segment_label=self.segment_label,
            transition_event=event,
            directive=directive,
            out_of_order=out_of_order,
            candidate=candidate,
            visual_cluster=vi,
            kinematic_cluster=ki,
            stage_latencies=latencies,
        )

    def latency_samples(self) -> Dict[str, List[float]]:
        """Сырые задержки последних кадров по стадиям (микросекунды), включая total."""
        samples = {stage: list(values) for stage, values in self._latencies.items()}
        samples[TOTAL] = list(self._totals)
        return samples

    def latency_snapshot(self) -> LatencyTable:
        """
        Статистика задержек по стадиям (min/mean/p99, миллисекунды)
        по последним cfg.latency_history кадрам.

        Raises:
            NoSamples: не сделано ни одного шага
        """
        if self.steps == 0:
            raise NoSamples("Сессия ещё не обработала ни одного кадра")
        return latency_table([self.latency_samples()], repetitions=1, encoded_input=self.encoded_input)


def latency_table(samples: List[Dict[str, List[float]]], repetitions: int, encoded_input: bool = False) -> LatencyTable:
    """Сводит сырые задержки (мкс) нескольких сессий в таблицу (мс)."""
    rows = []
    frames = 0
    for stage in (*STAGES, TOTAL):
        values = np.concatenate([np.asarray(s[stage], dtype=np.float64) for s in samples]) / 1000.0
        if values.size == 0:
            raise NoSamples("Нет измерений задержки")
        frames = values.size
        rows.append(
            LatencyRow(
                stage=stage,
                mean_ms=float(values.mean()),
                min_ms=float(values.min()),
                p99_ms=float(np.percentile(values, 99)),
                samples=int(values.size),
            )
        )
    return LatencyTable(
        rows=rows,
        repetitions=repetitions,
        sessions=len(samples),
        frames=frames,
        feature_encode_included=not encoded_input,
    )


def stream_new(
    h: TransitionHierarchy,
    directives: Mapping[str, Optional[AssistanceDirective]],
    cfg: OnlineConfig,
    encoded_input: bool = False,
) -> SegmenterSession:
    """
    Создаёт сессию в сегменте S1 с пустым буфером гистерезиса.

    Каждая каноническая метка иерархии должна иметь директиву или явный None;
    доп. метки ``T<n>+`` директив не требуют.

    Raises:
        ValidationFailed: иерархия не размечена
        MissingDirective: для метки нет записи
    """
    if not h.is_labeled:
        raise ValidationFailed("Иерархия не размечена, сегментация невозможна")
    missing = [label for label in h.assigned_labels if label not in directives]
    if missing:
        raise MissingDirective(f"Нет директив для переходов: {', '.join(missing)}")
    if not encoded_input and h.encoder is None:
        logger.debug("Иерархия без автоэнкодера: визуальные признаки считаются уже закодированными")
    return SegmenterSession(h, directives, cfg, encoded_input=encoded_input)


def step(session: SegmenterSession, visual: np.ndarray, kinematic) -> OnlineDecision:
    """Один шаг сессии."""
    return session.step(visual, kinematic)


def latency_snapshot(session: SegmenterSession) -> LatencyTable:
    """Статистика задержек сессии."""
    return session.latency_snapshot()


def decision_from_frame(session: SegmenterSession, record: dict) -> OnlineDecision:
    """
    Шаг по записи потока ``{"t", "kinematic", "visual"}``.

    Кватернион нормируется так же, как при приёме демонстрации.
    """
    try:
        kinematic = KinematicFeatures.from_vector(record["kinematic"])
        visual = np.asarray(record["visual"], dtype=np.float64)
        t = int(record.get("t", session.steps))
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationFailed(f"Некорректная запись кадра: {e}") from e
    return session.step(visual, kinematic, time_index=t)
