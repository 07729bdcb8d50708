"""
Смесь гауссиан с полными ковариациями.

EM в логарифмическом пространстве с инициализацией k-means++ и
перезапусками, апостериорные вероятности, жёсткое назначение,
силуэт и выбор числа компонент по силуэту.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist, squareform
from scipy.special import logsumexp
from sklearn.metrics import silhouette_score as sk_silhouette_score

from .errors import (
    AllDegenerate,
    DegenerateComponent,
    DimensionMismatch,
    NonFinite,
    SingleCluster,
    TooFewPoints,
    ValidationFailed,
)
from .schemas import GmmFitConfig
from .utils import parallel_map

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
TIE_TOLERANCE = 1e-12
# Оценка силуэта для k, при котором все точки попали в один кластер
COLLAPSED_SCORE = -1.0


def _precision_cholesky(covariances: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Для каждой ковариации Σ = L·Lᵀ возвращает L⁻¹ и log|L|.

    Raises:
        DegenerateComponent: если разложение Холецкого не существует
    """
    k, d, _ = covariances.shape
    precisions = np.empty_like(covariances)
    log_dets = np.empty(k)
    identity = np.eye(d)
    for i in range(k):
        try:
            lower = scipy.linalg.cholesky(covariances[i], lower=True)
        except np.linalg.LinAlgError as e:
            raise DegenerateComponent(
                f"Ковариация компоненты {i} не положительно определена даже после регуляризации"
            ) from e
        precisions[i] = scipy.linalg.solve_triangular(lower, identity, lower=True)
        log_dets[i] = np.sum(np.log(np.diag(lower)))
    return precisions, log_dets


@dataclass(frozen=True, eq=False)
class GmmModel:
    """
    Обученная смесь: веса, средние, полные ковариации.

    Множители Холецкого для точности кэшируются при создании,
    поэтому вывод для одного кадра стоит O(k·d²).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    fit_log_likelihood: float = float("nan")
    covariance_regularization: float = 0.0
    ll_history: Tuple[float, ...] = ()
    precision_cholesky: np.ndarray = field(init=False, repr=False)
    log_det_cholesky: np.ndarray = field(init=False, repr=False)
    log_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        covariances = np.asarray(self.covariances, dtype=np.float64)
        k, d = means.shape
        if weights.shape != (k,) or covariances.shape != (k, d, d):
            raise DimensionMismatch(
                f"Несогласованные параметры смеси: weights {weights.shape}, means {means.shape}, "
                f"covariances {covariances.shape}"
            )
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationFailed("Веса смеси должны быть положительными и в сумме давать 1")
        if not np.allclose(covariances, np.transpose(covariances, (0, 2, 1)), rtol=0.0, atol=1e-9):
            raise ValidationFailed("Ковариации смеси должны быть симметричными")
        precisions, log_dets = _precision_cholesky(covariances)
        for name, value in (
            ("weights", weights),
            ("means", means),
            ("covariances", covariances),
            ("precision_cholesky", precisions),
            ("log_det_cholesky", log_dets),
            ("log_weights", np.log(weights)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


def _weighted_log_prob(
    data: np.ndarray, means: np.ndarray, precisions: np.ndarray, log_dets: np.ndarray, log_weights: np.ndarray
) -> np.ndarray:
    """log(w_i) + log N(x; μ_i, Σ_i) для матрицы (n, d); результат (n, k)."""
    diff = data[:, None, :] - means[None, :, :]
    projected = np.einsum("kij,nkj->nki", precisions, diff)
    mahalanobis = np.sum(projected * projected, axis=2)
    d = data.shape[1]
    return log_weights[None, :] - 0.5 * (d * LOG_2PI + mahalanobis) - log_dets[None, :]


def _check_data(data: np.ndarray, dim: int | None = None) -> np.ndarray:
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None] if dim == 1 else matrix
    if matrix.ndim != 2:
        raise DimensionMismatch(f"Ожидалась матрица (n, d), получено {matrix.shape}")
    if dim is not None and matrix.shape[1] != dim:
        raise DimensionMismatch(f"Ожидалась размерность {dim}, получено {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise NonFinite("Данные смеси содержат NaN/Inf")
    return matrix


def _check_vector(model: GmmModel, x: np.ndarray) -> np.ndarray:
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape != (model.dim,):
        raise DimensionMismatch(f"Ожидался вектор размерности {model.dim}, получено {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise NonFinite("Вектор содержит NaN/Inf")
    return vector


def kmeans_plusplus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Выбор k начальных центров по правилу k-means++ (вероятность ∝ D²)."""
    n = data.shape[0]
    chosen = [int(rng.integers(0, n))]
    dist_sq = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = dist_sq.sum()
        if total > 0:
            idx = int(rng.choice(n, p=dist_sq / total))
        else:
            # все оставшиеся точки совпадают с уже выбранными центрами
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        dist_sq = np.minimum(dist_sq, np.sum((data - data[idx]) ** 2, axis=1))
    return data[chosen].copy()


def _m_step(
    data: np.ndarray, resp: np.ndarray, fallback_means: np.ndarray, eps: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """M-шаг: веса, средние и регуляризованные ковариации по ответственностям."""
    n, d = data.shape
    nk = resp.sum(axis=0)
    empty = nk < 1e-10
    nk_safe = np.where(empty, 1.0, nk)
    means = (resp.T @ data) / nk_safe[:, None]
    means[empty] = fallback_means[empty]
    covariances = np.empty((resp.shape[1], d, d))
    identity = np.eye(d)
    for i in range(resp.shape[1]):
        diff = data - means[i]
        cov = (resp[:, i, None] * diff).T @ diff / nk_safe[i]
        covariances[i] = 0.5 * (cov + cov.T) + eps * identity
    weights = np.maximum(nk, 1e-10)
    weights = weights / weights.sum()
    return weights, means, covariances


def _em_run(
    data: np.ndarray, k: int, cfg: GmmFitConfig, eps: float, rng: np.random.Generator
) -> Tuple[Tuple[np.ndarray, np.ndarray, np.ndarray], List[float], str]:
    """Один запуск EM; история правдоподобия монотонна по построению."""
    centers = kmeans_plusplus(data, k, rng)
    distances = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((data.shape[0], k))
    resp[np.arange(data.shape[0]), np.argmin(distances, axis=1)] = 1.0
    params = _m_step(data, resp, centers, eps)

    history: List[float] = []
    previous = params
    status = "max_iterations"
    for iteration in range(cfg.max_iterations + 1):
        precisions, log_dets = _precision_cholesky(params[2])
        log_prob = _weighted_log_prob(data, params[1], precisions, log_dets, np.log(params[0]))
        log_norm = logsumexp(log_prob, axis=1)
        ll = float(np.sum(log_norm))
        if history and ll < history[-1]:
            params = previous
            status = "stalled"
            break
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) <= cfg.ll_tolerance * max(abs(history[-2]), 1.0):
            status = "converged"
            break
        if iteration == cfg.max_iterations:
            break
        resp = np.exp(log_prob - log_norm[:, None])
        previous = params
        params = _m_step(data, resp, params[1], eps)
    return params, history, status


def gmm_fit(data: np.ndarray, k: int, cfg: GmmFitConfig, regularization: float | None = None) -> GmmModel:
    """
    Обучает смесь из k компонент методом EM.

    Лучший из cfg.num_restarts запусков по итоговому правдоподобию;
    каждый запуск засеян от (cfg.seed, k, номер запуска).

    Args:
        data: матрица (n, d)
        k: число компонент
        cfg: параметры EM
        regularization: добавка к диагонали ковариаций (по умолчанию cfg.covariance_regularization)

    Raises:
        TooFewPoints: n < k
        DegenerateComponent: ни один запуск не дал положительно определённых ковариаций
    """
    matrix = _check_data(data)
    n = matrix.shape[0]
    if k < 1:
        raise ValidationFailed(f"Число компонент должно быть положительным, получено {k}")
    if n < k:
        raise TooFewPoints(f"Точек {n} меньше, чем компонент {k}")
    eps = cfg.covariance_regularization if regularization is None else float(regularization)

    best = None
    last_error: DegenerateComponent | None = None
    for restart in range(cfg.num_restarts):
        rng = np.random.default_rng([cfg.seed, k, restart])
        try:
            params, history, status = _em_run(matrix, k, cfg, eps, rng)
        except DegenerateComponent as e:
            last_error = e
            logger.debug(f"GMM k={k}: перезапуск {restart} выродился: {e.detail}")
            continue
        logger.debug(f"GMM k={k}: перезапуск {restart}, итераций {len(history)}, LL={history[-1]:.6g}, {status}")
        if best is None or history[-1] > best[1][-1]:
            best = (params, history)
        if k == 1:
            break
    if best is None:
        assert last_error is not None
        raise last_error

    (weights, means, covariances), history = best
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covariances,
        fit_log_likelihood=history[-1],
        covariance_regularization=eps,
        ll_history=tuple(history),
    )


def gmm_log_prob(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """Взвешенные логарифмы плотностей компонент для матрицы (n, d) → (n, k)."""
    matrix = _check_data(data, model.dim)
    return _weighted_log_prob(matrix, model.means, model.precision_cholesky, model.log_det_cholesky, model.log_weights)


def gmm_posterior(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Апостериорные вероятности компонент для одного вектора (сумма 1)."""
    vector = _check_vector(model, x)
    log_prob = _weighted_log_prob(
        vector[None, :], model.means, model.precision_cholesky, model.log_det_cholesky, model.log_weights
    )[0]
    return np.exp(log_prob - logsumexp(log_prob))


def argmax_low(values: np.ndarray) -> int:
    """Индекс максимума; при равенстве в пределах допуска берётся меньший."""
    return int(np.flatnonzero(values >= values.max() - TIE_TOLERANCE)[0])


def gmm_assign(model: GmmModel, x: np.ndarray) -> int:
    """Жёсткое назначение: argmax апостериорной вероятности (индексация с нуля)."""
    return argmax_low(gmm_posterior(model, x))


def gmm_predict(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """Жёсткие назначения для матрицы (n, d)."""
    log_prob = gmm_log_prob(model, data)
    resp = np.exp(log_prob - logsumexp(log_prob, axis=1, keepdims=True))
    return np.array([argmax_low(row) for row in resp], dtype=np.int64)


def silhouette_score(data: np.ndarray, labels: np.ndarray) -> float:
    """
    Средний силуэт s(i) = (b - a) / max(a, b) по евклидовой метрике.

    Одиночные кластеры дают s(i) = 0.

    Raises:
        SingleCluster: меньше двух различных меток
        TooFewPoints: меньше трёх точек
    """
    matrix = _check_data(data)
    labels = np.asarray(labels)
    if labels.shape != (matrix.shape[0],):
        raise DimensionMismatch(f"Число меток {labels.shape} не совпадает с числом точек {matrix.shape[0]}")
    unique, codes = np.unique(labels, return_inverse=True)
    if unique.size < 2:
        raise SingleCluster("Для силуэта нужно как минимум два кластера")
    n = matrix.shape[0]
    if n < 3:
        raise TooFewPoints(f"Для силуэта нужно не меньше трёх точек, получено {n}")

    if unique.size == n:
        # только одиночные кластеры: s(i) = 0 для всех точек
        return 0.0
    distances = squareform(pdist(matrix, metric="euclidean"))
    return float(sk_silhouette_score(distances, codes, metric="precomputed"))


@dataclass(frozen=True)
class KSelection:
    """Результат выбора числа компонент: модель, k, силуэт и вся кривая."""

    model: GmmModel
    k: int
    score: float
    curve: Dict[int, float]


def _score_k(matrix: np.ndarray, k: int, cfg: GmmFitConfig, regularization: float | None):
    try:
        model = gmm_fit(matrix, k, cfg, regularization)
    except DegenerateComponent as e:
        logger.warning(f"Выбор k: k={k} пропущено: {e.detail}")
        return None
    labels = gmm_predict(model, matrix)
    if np.unique(labels).size < 2:
        return model, COLLAPSED_SCORE
    return model, silhouette_score(matrix, labels)


def select_k(
    data: np.ndarray, k_min: int, k_max: int, cfg: GmmFitConfig, regularization: float | None = None
) -> KSelection:
    """
    Обучает смесь для каждого k из [k_min, k_max] и выбирает k по силуэту.

    Силуэт считается по жёстким назначениям; при равенстве выбирается
    меньшее k. Значения k обучаются параллельно.

    Raises:
        TooFewPoints: диапазон k не помещается в [2, n - 1]
        AllDegenerate: ни одно k не удалось обучить
    """
    matrix = _check_data(data)
    n = matrix.shape[0]
    if not 2 <= k_min <= k_max <= n - 1:
        raise TooFewPoints(f"Диапазон k [{k_min}, {k_max}] недопустим для {n} точек")

    ks = list(range(k_min, k_max + 1))
    results = parallel_map(lambda k: _score_k(matrix, k, cfg, regularization), ks)
    curve: Dict[int, float] = {}
    best: KSelection | None = None
    for k, result in zip(ks, results):
        if result is None:
            continue
        model, score = result
        curve[k] = score
        if best is None or score > best.score:
            best = KSelection(model=model, k=k, score=score, curve=curve)
    if best is None:
        raise AllDegenerate(f"Ни одно k из [{k_min}, {k_max}] не удалось обучить")
    return KSelection(model=best.model, k=best.k, score=best.score, curve=dict(curve))
