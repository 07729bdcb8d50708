"""
Иерархическая кластеризация переходных состояний.

Поиск кандидатов в переходы по невязке локальной линейной динамики,
двухуровневая кластеризация (визуальные признаки, затем кинематика
внутри каждого визуального кластера), прореживание по покрытию
демонстраций и упорядоченная разметка переходов.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autoencoder import AutoencoderModel, ae_encode
from .core_model import Demonstration, SegmentTrack, Standardizer, standardize_fit
from .errors import AllPruned, NoSurvivors, TooFewCandidates, TooShort, ValidationFailed
from .gmm import GmmModel, gmm_fit, gmm_predict, select_k
from .schemas import HierarchyDiagnostics, KinematicLevelDiagnostics, OnlineConfig, PrunedCluster, TscConfig
from .utils import parallel_map

if TYPE_CHECKING:
    from .schemas import AssistanceDirective

logger = logging.getLogger(__name__)

ClusterKey = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class TransitionCandidate:
    """Кандидат в переходное состояние τ(t) = (k(t), v(t))."""

    demo_id: str
    time_index: int
    frame: int
    normalized_time: float
    kinematic: np.ndarray
    visual: np.ndarray


@dataclass(frozen=True)
class CandidateMembership:
    """Принадлежность кандидата подкластеру (visual, kinematic)."""

    demo_id: str
    time_index: int
    normalized_time: float
    visual_cluster: int
    kinematic_cluster: int

    @property
    def key(self) -> ClusterKey:
        return self.visual_cluster, self.kinematic_cluster


@dataclass(frozen=True, eq=False)
class TransitionHierarchy:
    """
    Двухуровневая иерархия: визуальная смесь C_v и по одной кинематической
    смеси C_i^k на каждый визуальный кластер.

    label_map сопоставляет подкластеру метку перехода или None (отброшен).
    До разметки label_map пуст.
    """

    visual_model: GmmModel
    kinematic_models: Dict[int, GmmModel]
    standardizer: Standardizer
    encoder: Optional[AutoencoderModel]
    canonical_order: Tuple[str, ...]
    memberships: Tuple[CandidateMembership, ...]
    num_demos: int
    label_map: Dict[ClusterKey, Optional[str]] = field(default_factory=dict)
    pruned: frozenset = field(default_factory=frozenset)
    diagnostics: HierarchyDiagnostics = field(default_factory=HierarchyDiagnostics)

    @property
    def keys(self) -> List[ClusterKey]:
        """Все подкластеры в порядке (visual, kinematic)."""
        return [(vi, ki) for vi in sorted(self.kinematic_models) for ki in range(self.kinematic_models[vi].num_components)]

    @property
    def survivors(self) -> List[ClusterKey]:
        return [key for key in self.keys if key not in self.pruned]

    @property
    def is_labeled(self) -> bool:
        return bool(self.label_map)

    @property
    def assigned_labels(self) -> List[str]:
        """Канонические метки, реально назначенные подкластерам, в каноническом порядке."""
        present = {label for label in self.label_map.values() if label is not None}
        return [label for label in self.canonical_order if label in present]

    @property
    def extra_labels(self) -> List[str]:
        return sorted(
            (label for label in self.label_map.values() if label is not None and label not in self.canonical_order),
            key=lambda label: int(label[1:-1]),
        )

    def members(self, key: ClusterKey) -> List[CandidateMembership]:
        return [m for m in self.memberships if m.key == key]


def one_step_residuals(z: np.ndarray, window: int) -> np.ndarray:
    """
    Невязка одношагового прогноза по локальной линейной динамике.

    Для каждого t >= w дрейф b подбирается МНК по окну x[t-w..t-1]
    (модель x[s+1] = x[s] + b), прогноз x[t-1] + b. Для t < w значение NaN.
    """
    num_frames = z.shape[0]
    residuals = np.full(num_frames, np.nan)
    if num_frames <= window:
        return residuals
    drift = (z[window - 1 : num_frames - 1] - z[: num_frames - window]) / (window - 1)
    predicted = z[window - 1 : num_frames - 1] + drift
    residuals[window:] = np.linalg.norm(z[window:] - predicted, axis=1)
    return residuals


def residual_threshold(residuals: np.ndarray, cfg: TscConfig) -> float:
    """Порог невязки: фиксированный или mean + sigma·std по демонстрации, не ниже residual_floor."""
    valid = residuals[np.isfinite(residuals)]
    if cfg.residual_threshold == "auto":
        threshold = float(valid.mean() + cfg.threshold_sigma * valid.std()) if valid.size else 0.0
    else:
        threshold = float(cfg.residual_threshold)
    return max(threshold, cfg.residual_floor)


def _merge_exceedances(residuals: np.ndarray, exceed: np.ndarray, merge_window: int) -> List[int]:
    """Превышения ближе merge_window кадров сливаются в один кандидат в максимуме невязки."""
    frames = np.flatnonzero(exceed)
    if frames.size == 0:
        return []
    groups: List[List[int]] = [[int(frames[0])]]
    for frame in frames[1:]:
        if frame - groups[-1][-1] < merge_window:
            groups[-1].append(int(frame))
        else:
            groups.append([int(frame)])
    return [group[int(np.argmax(residuals[group]))] for group in groups]


def _make_candidate(
    demo: Demonstration, frame: int, z: np.ndarray, encoder: Optional[AutoencoderModel]
) -> TransitionCandidate:
    visual = demo.visual[frame]
    if encoder is not None:
        visual = ae_encode(encoder, visual)
    return TransitionCandidate(
        demo_id=demo.id,
        time_index=int(demo.time_index[frame]),
        frame=frame,
        normalized_time=frame / demo.num_frames,
        kinematic=np.array(z[frame]),
        visual=np.array(visual),
    )


def detect_transition_candidates(
    demo: Demonstration,
    cfg: TscConfig,
    standardizer: Optional[Standardizer] = None,
    encoder: Optional[AutoencoderModel] = None,
) -> List[TransitionCandidate]:
    """
    Находит кандидатов в переходы одной демонстрации.

    Args:
        demo: демонстрация
        cfg: параметры детектора
        standardizer: стандартизация кинематики (по умолчанию подбирается по самой демонстрации)
        encoder: автоэнкодер для визуальных признаков (без него берутся сырые)

    Returns:
        Кандидаты, отсортированные по времени

    Raises:
        TooShort: T <= 2w
    """
    window = cfg.dynamics_window
    if demo.num_frames <= 2 * window:
        raise TooShort(f"Демонстрация {demo.id}: T={demo.num_frames} не больше 2w={2 * window}")
    standardizer = standardizer if standardizer is not None else standardize_fit([demo])
    z = standardizer.apply_batch(demo.kinematics)
    residuals = one_step_residuals(z, window)
    threshold = residual_threshold(residuals, cfg)
    exceed = np.nan_to_num(residuals, nan=-np.inf) > threshold
    frames = _merge_exceedances(residuals, exceed, cfg.merge_window)
    logger.debug(f"Демонстрация {demo.id}: порог {threshold:.4g}, кандидатов {len(frames)}")
    return [_make_candidate(demo, frame, z, encoder) for frame in frames]


def collect_candidates(
    demos: Sequence[Demonstration],
    cfg: TscConfig,
    standardizer: Standardizer,
    encoder: Optional[AutoencoderModel] = None,
) -> List[TransitionCandidate]:
    """Кандидаты всех демонстраций (параллельно по демонстрациям) или все состояния при cluster_all_states."""
    if cfg.cluster_all_states:
        candidates = []
        for demo in demos:
            z = standardizer.apply_batch(demo.kinematics)
            candidates.extend(_make_candidate(demo, frame, z, encoder) for frame in range(demo.num_frames))
        return candidates
    per_demo = parallel_map(lambda demo: detect_transition_candidates(demo, cfg, standardizer, encoder), list(demos))
    return [candidate for group in per_demo for candidate in group]


def _level_regularization(data: np.ndarray, cfg: TscConfig) -> float:
    """eps = max(eps_cov, fraction · средняя по измерениям дисперсия данных уровня)."""
    spread = float(np.mean(np.var(data, axis=0))) if data.shape[0] > 1 else 0.0
    return max(cfg.gmm.covariance_regularization, cfg.covariance_regularization_fraction * spread)


def _fit_kinematic_level(
    visual_cluster: int, data: np.ndarray, cfg: TscConfig
) -> Tuple[GmmModel, KinematicLevelDiagnostics]:
    """Кинематическая смесь внутри одного визуального кластера."""
    n = data.shape[0]
    eps = _level_regularization(data, cfg)
    k_low = max(cfg.kinematic_k_min, 2)
    k_high = min(cfg.kinematic_k_max, n - 1)
    allow_single = cfg.kinematic_k_min <= 1

    if n < 3 or k_low > k_high:
        if not allow_single and n >= 2:
            k = min(cfg.kinematic_k_min, n)
            model = gmm_fit(data, k, cfg.gmm, eps)
            return model, KinematicLevelDiagnostics(visual_cluster=visual_cluster, members=n, k=k, reason="too_few_members")
        model = gmm_fit(data, 1, cfg.gmm, eps)
        return model, KinematicLevelDiagnostics(visual_cluster=visual_cluster, members=n, k=1, reason="too_few_members")

    selection = select_k(data, k_low, k_high, cfg.gmm, eps)
    curve = {str(k): score for k, score in selection.curve.items()}
    if allow_single and selection.score < cfg.kinematic_split_silhouette:
        model = gmm_fit(data, 1, cfg.gmm, eps)
        return model, KinematicLevelDiagnostics(
            visual_cluster=visual_cluster, members=n, k=1, score=selection.score, curve=curve, reason="weak_split"
        )
    return selection.model, KinematicLevelDiagnostics(
        visual_cluster=visual_cluster, members=n, k=selection.k, score=selection.score, curve=curve
    )


def fit_hierarchy(
    candidates: Sequence[TransitionCandidate],
    cfg: TscConfig,
    standardizer: Standardizer,
    encoder: Optional[AutoencoderModel] = None,
) -> TransitionHierarchy:
    """
    Строит неразмеченную иерархию по кандидатам всех демонстраций.

    Уровень 1: select_k по визуальным векторам. Уровень 2: для каждого
    визуального кластера select_k по стандартизованной кинематике его членов.

    Raises:
        TooFewCandidates: кандидатов меньше k_min + 1 или они из одной демонстрации
    """
    candidates = sorted(candidates, key=lambda c: (c.demo_id, c.time_index))
    n = len(candidates)
    demo_ids = {c.demo_id for c in candidates}
    if len(demo_ids) < 2:
        raise TooFewCandidates(f"Нужны кандидаты хотя бы из двух демонстраций, получено {len(demo_ids)}")
    if n < cfg.visual_k_min + 1:
        raise TooFewCandidates(f"Кандидатов {n}, а нужно не меньше {cfg.visual_k_min + 1}")

    visual = np.vstack([c.visual for c in candidates])
    kinematic = np.vstack([c.kinematic for c in candidates])

    eps_visual = _level_regularization(visual, cfg)
    visual_selection = select_k(visual, cfg.visual_k_min, min(cfg.visual_k_max, n - 1), cfg.gmm, eps_visual)
    weak = visual_selection.score < cfg.weak_silhouette
    logger.info(
        f"Визуальный уровень: k={visual_selection.k}, силуэт {visual_selection.score:.3f}, "
        f"кривая {_format_curve(visual_selection.curve)}"
    )
    if weak:
        logger.warning(f"⚠️ Слабый силуэт визуального уровня: {visual_selection.score:.3f} < {cfg.weak_silhouette}")

    visual_labels = gmm_predict(visual_selection.model, visual)
    kinematic_models: Dict[int, GmmModel] = {}
    kinematic_diagnostics: List[KinematicLevelDiagnostics] = []
    kinematic_labels = np.zeros(n, dtype=np.int64)
    for vi in range(visual_selection.k):
        mask = visual_labels == vi
        if not np.any(mask):
            # пустой визуальный кластер: одна компонента в центре масс всей кинематики
            model = gmm_fit(kinematic, 1, cfg.gmm, _level_regularization(kinematic, cfg))
            diag = KinematicLevelDiagnostics(visual_cluster=vi, members=0, k=1, reason="empty")
        else:
            model, diag = _fit_kinematic_level(vi, kinematic[mask], cfg)
            kinematic_labels[mask] = gmm_predict(model, kinematic[mask])
        kinematic_models[vi] = model
        kinematic_diagnostics.append(diag)
        logger.info(f"Кинематический уровень {vi}: членов {diag.members}, k={diag.k} ({diag.reason})")

    memberships = tuple(
        CandidateMembership(
            demo_id=c.demo_id,
            time_index=c.time_index,
            normalized_time=c.normalized_time,
            visual_cluster=int(visual_labels[i]),
            kinematic_cluster=int(kinematic_labels[i]),
        )
        for i, c in enumerate(candidates)
    )
    diagnostics = HierarchyDiagnostics(
        candidates=n,
        visual_k=visual_selection.k,
        visual_score=visual_selection.score,
        visual_curve={str(k): score for k, score in visual_selection.curve.items()},
        weak_visual_silhouette=weak,
        visual_regularization=eps_visual,
        kinematic=kinematic_diagnostics,
    )
    return TransitionHierarchy(
        visual_model=visual_selection.model,
        kinematic_models=kinematic_models,
        standardizer=standardizer,
        encoder=encoder,
        canonical_order=tuple(cfg.canonical_order),
        memberships=memberships,
        num_demos=len(demo_ids),
        diagnostics=diagnostics,
    )


def _format_curve(curve: Mapping[int, float]) -> str:
    return ", ".join(f"{k}:{score:.3f}" for k, score in sorted(curve.items()))


def required_demos(num_demos: int, fraction: float) -> int:
    """Минимальное число различных демонстраций в подкластере: max(1, ceil(ρ·|D|))."""
    return max(1, math.ceil(fraction * num_demos - 1e-9))


def prune_clusters(
    h: TransitionHierarchy, demos: Sequence[Demonstration] | int | None, cfg: TscConfig
) -> TransitionHierarchy:
    """
    Отбрасывает подкластеры, покрывающие меньше ceil(ρ·|D|) демонстраций.

    Args:
        demos: обучающие демонстрации или их число (по умолчанию число демонстраций среди кандидатов)

    Raises:
        AllPruned: не выжил ни один подкластер
    """
    if demos is None:
        num_demos = h.num_demos
    elif isinstance(demos, int):
        num_demos = demos
    else:
        num_demos = len(demos)
    required = required_demos(num_demos, cfg.min_demo_fraction)

    coverage: Dict[ClusterKey, set] = {key: set() for key in h.keys}
    for m in h.memberships:
        coverage.setdefault(m.key, set()).add(m.demo_id)

    pruned = set()
    pruned_diag = []
    for key in h.keys:
        covered = len(coverage[key])
        if covered < required:
            pruned.add(key)
            pruned_diag.append(
                PrunedCluster(
                    visual_cluster=key[0], kinematic_cluster=key[1], demos_covered=covered, demos_required=required
                )
            )
            logger.info(f"Подкластер {key} отброшен: покрывает {covered} демонстраций из требуемых {required}")

    survivors = [key for key in h.keys if key not in pruned]
    if not survivors:
        raise AllPruned(f"Все подкластеры отброшены при ρ={cfg.min_demo_fraction} (нужно {required} демонстраций)")
    diagnostics = h.diagnostics.model_copy(update={"pruned": pruned_diag, "survivors": len(survivors)})
    return replace(h, pruned=frozenset(pruned), label_map={}, diagnostics=diagnostics)


def _mean_time(h: TransitionHierarchy, key: ClusterKey) -> float:
    members = h.members(key)
    return float(np.mean([m.normalized_time for m in members])) if members else 1.0


def assign_transition_labels(h: TransitionHierarchy, demos: Sequence[Demonstration] | None = None) -> TransitionHierarchy:
    """
    Назначает выжившим подкластерам канонические метки по среднему нормированному времени.

    Если выживших больше канонических меток, метки получают подкластеры
    с наибольшим покрытием, остальные становятся доп. метками ``T<n>+``.

    Raises:
        NoSurvivors: выживших подкластеров нет
    """
    survivors = h.survivors
    if not survivors:
        raise NoSurvivors("Нет выживших подкластеров для разметки")
    canonical = list(h.canonical_order)
    mean_times = {key: _mean_time(h, key) for key in survivors}
    by_time = sorted(survivors, key=lambda key: (mean_times[key], key))

    if len(by_time) > len(canonical):
        coverage = {key: len({m.demo_id for m in h.members(key)}) for key in survivors}
        sizes = {key: len(h.members(key)) for key in survivors}
        ranked = sorted(survivors, key=lambda key: (-coverage[key], -sizes[key], mean_times[key], key))
        chosen = set(ranked[: len(canonical)])
    else:
        chosen = set(by_time)

    label_map: Dict[ClusterKey, Optional[str]] = {key: None for key in h.keys}
    extras = []
    canonical_iter = iter(canonical)
    extra_index = len(canonical)
    for key in by_time:
        if key in chosen:
            label_map[key] = next(canonical_iter)
        else:
            extra_index += 1
            label = f"T{extra_index}+"
            label_map[key] = label
            extras.append(label)

    mismatch = len(survivors) != len(canonical)
    if mismatch:
        logger.warning(f"⚠️ Выживших подкластеров {len(survivors)}, канонических переходов {len(canonical)}")
    for key in by_time:
        logger.info(f"Подкластер {key} -> {label_map[key]} (среднее время {mean_times[key]:.3f})")
    diagnostics = h.diagnostics.model_copy(
        update={"canonical_count": len(canonical), "count_mismatch": mismatch, "extras": extras, "survivors": len(survivors)}
    )
    return replace(h, label_map=label_map, diagnostics=diagnostics)


def build_hierarchy(
    demos: Sequence[Demonstration],
    cfg: TscConfig,
    standardizer: Standardizer,
    encoder: Optional[AutoencoderModel] = None,
) -> TransitionHierarchy:
    """Полный цикл: кандидаты, иерархия, прореживание, разметка."""
    candidates = collect_candidates(demos, cfg, standardizer, encoder)
    logger.info(f"Найдено кандидатов: {len(candidates)} в {len(demos)} демонстрациях")
    h = fit_hierarchy(candidates, cfg, standardizer, encoder)
    h = prune_clusters(h, demos, cfg)
    return assign_transition_labels(h, demos)


def segment_demonstration(
    h: TransitionHierarchy,
    demo: Demonstration,
    directives: Optional[Mapping[str, Optional["AssistanceDirective"]]] = None,
    cfg: Optional[OnlineConfig] = None,
) -> SegmentTrack:
    """
    Прогоняет онлайн-правило решения по демонстрации офлайн.

    Сегмент до первого события S1, после события Ti сегмент S(i+1).
    """
    from .online_segmenter import stream_new

    if not h.is_labeled:
        raise ValidationFailed("Иерархия не размечена")
    if directives is None:
        directives = {label: None for label in h.assigned_labels}
    session = stream_new(h, directives, cfg or OnlineConfig(), encoded_input=h.encoder is None)
    labels = [
        session.step(demo.visual[i], demo.kinematics[i], time_index=int(demo.time_index[i])).segment_label
        for i in range(demo.num_frames)
    ]
    return SegmentTrack.from_labels(
        labels, start_index=int(demo.time_index[0]), segment_count=len(h.canonical_order) + 1
    )
