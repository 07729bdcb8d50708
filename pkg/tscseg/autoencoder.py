"""
Полносвязный автоэнкодер визуальных признаков.

Сжимает сырые визуальные векторы (по умолчанию 512) в латентный код (128).
Обучение минибатчами с правилом обновления RMSprop и ранней остановкой
по отложенной выборке; лучший чекпоинт возвращается как итоговая модель.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, NonFinite
from .schemas import AutoencoderConfig

logger = logging.getLogger(__name__)

SEARCH_BATCH_SIZES = (16, 32, 64, 128)
SEARCH_LR_RANGE = (1e-4, 1e-2)


@dataclass(frozen=True, eq=False)
class AutoencoderModel:
    """
    Обученный автоэнкодер.

    ``weights[i]`` имеет форму (in, out); первые ``encoder_depth`` слоёв
    образуют энкодер, остальные декодер. ReLU на скрытых слоях,
    тождественная активация на латентном и выходном.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    encoder_depth: int
    loss_history: Tuple[float, ...] = field(default=())
    checkpoint_history: Tuple[float, ...] = field(default=())
    best_epoch: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not 0 < self.encoder_depth < len(self.weights):
            raise DimensionMismatch("Некорректная структура слоёв автоэнкодера")
        for i in range(1, len(self.weights)):
            if self.weights[i - 1].shape[1] != self.weights[i].shape[0]:
                raise DimensionMismatch(f"Слои {i - 1} и {i} автоэнкодера не согласованы по размеру")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise DimensionMismatch("Размер смещения не совпадает с шириной слоя")
            w.setflags(write=False)
            b.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.weights[self.encoder_depth - 1].shape[1])

    @property
    def widths(self) -> List[int]:
        return [self.input_dim] + [int(w.shape[1]) for w in self.weights]

    @property
    def final_loss(self) -> float:
        return self.checkpoint_history[-1] if self.checkpoint_history else float("nan")


def _is_linear_layer(index: int, encoder_depth: int, num_layers: int) -> bool:
    """Латентный и выходной слои линейные, остальные с ReLU."""
    return index == encoder_depth - 1 or index == num_layers - 1


def _layer_widths(cfg: AutoencoderConfig) -> List[int]:
    return [cfg.input_dim, *cfg.encoder_hidden, cfg.latent_dim, *cfg.decoder_hidden, cfg.input_dim]


def init_model(cfg: AutoencoderConfig, rng: np.random.Generator | None = None) -> AutoencoderModel:
    """Инициализация He-uniform: U(±sqrt(6 / fan_in)), нулевые смещения."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    widths = _layer_widths(cfg)
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderModel(tuple(weights), tuple(biases), encoder_depth=len(cfg.encoder_hidden) + 1)


def _forward(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], encoder_depth: int, batch: np.ndarray
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Прямой проход; возвращает (входы слоёв, преактивации)."""
    inputs = []
    pre = []
    activation = batch
    num_layers = len(weights)
    for i, (w, b) in enumerate(zip(weights, biases)):
        inputs.append(activation)
        z = activation @ w + b
        pre.append(z)
        activation = z if _is_linear_layer(i, encoder_depth, num_layers) else np.maximum(z, 0.0)
    inputs.append(activation)
    return inputs, pre


def _mse(output: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((output - target) ** 2))


def _loss_and_gradients(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    encoder_depth: int,
    batch: np.ndarray,
    scale: float = 1.0,
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Потеря scale·MSE и её градиенты по всем параметрам (обратное распространение)."""
    inputs, pre = _forward(weights, biases, encoder_depth, batch)
    output = inputs[-1]
    loss = scale * _mse(output, batch)
    num_layers = len(weights)
    delta = (2.0 * scale / output.size) * (output - batch)
    grad_w: List[np.ndarray] = [np.empty(0)] * num_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * num_layers
    for i in range(num_layers - 1, -1, -1):
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            if not _is_linear_layer(i - 1, encoder_depth, num_layers):
                delta = delta * (pre[i - 1] > 0.0)
    return loss, grad_w, grad_b


@dataclass(frozen=True)
class GradientSet:
    """Градиенты функции потерь по весам и смещениям каждого слоя."""

    loss: float
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in zip(self.weights, self.biases) for g in pair])


def ae_gradients(model: AutoencoderModel, batch: np.ndarray, scale: float = 1.0) -> GradientSet:
    """
    Градиент среднеквадратичной ошибки реконструкции по всем параметрам.

    Args:
        model: автоэнкодер
        batch: матрица (n, input_dim), n >= 1
        scale: множитель функции потерь

    Raises:
        EmptyDataset: пустой батч
        NonFinite: переполнение при вычислении
    """
    data = _check_matrix(batch, model.input_dim)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad_w, grad_b = _loss_and_gradients(model.weights, model.biases, model.encoder_depth, data, scale)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grad_w + grad_b):
        raise NonFinite("Переполнение при вычислении градиентов автоэнкодера")
    return GradientSet(loss=loss, weights=tuple(grad_w), biases=tuple(grad_b))


def rmsprop_step(
    param: np.ndarray, grad: np.ndarray, accumulator: np.ndarray, lr: float, decay: float, eps: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Один шаг RMSprop.

    r <- decay·r + (1 - decay)·g²;  param <- param - lr·g / sqrt(r + eps)
    """
    accumulator = decay * accumulator + (1.0 - decay) * grad * grad
    return param - lr * grad / np.sqrt(accumulator + eps), accumulator


def _check_matrix(data: np.ndarray, dim: int) -> np.ndarray:
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"Ожидалась матрица (n, {dim}), получено {matrix.shape}")
    if matrix.shape[0] == 0:
        raise EmptyDataset("Пустой набор данных для автоэнкодера")
    if matrix.shape[1] != dim:
        raise DimensionMismatch(f"Ожидалась размерность {dim}, получено {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise NonFinite("Данные автоэнкодера содержат NaN/Inf")
    return matrix


def ae_train(data: np.ndarray, cfg: AutoencoderConfig) -> AutoencoderModel:
    """
    Обучает автоэнкодер минимизацией MSE реконструкции.

    Порядок батчей, разбиение на обучение/валидацию и инициализация
    определяются одним генератором от cfg.seed, поэтому история потерь
    воспроизводима побитно.

    Raises:
        EmptyDataset: n = 0
        NonFinite: потеря разошлась (с номером эпохи)
    """
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim == 2 and matrix.shape[0] == 0:
        raise EmptyDataset("Нет визуальных векторов для обучения автоэнкодера")
    matrix = _check_matrix(matrix, cfg.input_dim)

    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, rng)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    depth = model.encoder_depth

    n = matrix.shape[0]
    n_val = int(round(n * cfg.validation_fraction)) if n >= 10 else 0
    perm = rng.permutation(n)
    validation = matrix[perm[:n_val]]
    training = matrix[perm[n_val:]]
    monitor = validation if n_val else training
    batch_size = min(cfg.batch_size, training.shape[0])

    acc_w = [np.zeros_like(w) for w in weights]
    acc_b = [np.zeros_like(b) for b in biases]
    best = ([w.copy() for w in weights], [b.copy() for b in biases])
    best_loss = _mse(_forward(weights, biases, depth, monitor)[0][-1], monitor)
    checkpoints = [best_loss]
    history: List[float] = []
    best_epoch = 0
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(training.shape[0])
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, training.shape[0], batch_size):
                batch = training[order[start : start + batch_size]]
                _, grad_w, grad_b = _loss_and_gradients(weights, biases, depth, batch)
                for i in range(len(weights)):
                    weights[i], acc_w[i] = rmsprop_step(
                        weights[i], grad_w[i], acc_w[i], cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon
                    )
                    biases[i], acc_b[i] = rmsprop_step(
                        biases[i], grad_b[i], acc_b[i], cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon
                    )
            train_loss = _mse(_forward(weights, biases, depth, training)[0][-1], training)
            monitor_loss = _mse(_forward(weights, biases, depth, monitor)[0][-1], monitor) if n_val else train_loss

        if not (np.isfinite(train_loss) and np.isfinite(monitor_loss)):
            raise NonFinite(f"Потеря автоэнкодера разошлась на эпохе {epoch}")
        history.append(train_loss)
        logger.debug(f"Автоэнкодер: эпоха {epoch}, train={train_loss:.6g}, val={monitor_loss:.6g}")

        if monitor_loss < best_loss:
            best = ([w.copy() for w in weights], [b.copy() for b in biases])
            best_loss = monitor_loss
            best_epoch = epoch
            checkpoints.append(monitor_loss)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                logger.debug(f"Автоэнкодер: ранняя остановка на эпохе {epoch}")
                break

    logger.info(
        f"Автоэнкодер обучен: {len(history)} эпох, лучшая эпоха {best_epoch}, "
        f"MSE {checkpoints[0]:.6g} -> {best_loss:.6g}"
    )
    return AutoencoderModel(
        weights=tuple(best[0]),
        biases=tuple(best[1]),
        encoder_depth=depth,
        loss_history=tuple(history),
        checkpoint_history=tuple(checkpoints),
        best_epoch=best_epoch,
    )


def ae_random_search(
    data: np.ndarray, cfg: AutoencoderConfig, trials: int, seed: int = 0
) -> Tuple[AutoencoderModel, AutoencoderConfig]:
    """
    Случайный поиск по learning_rate (лог-равномерно) и batch_size.

    Возвращает модель с наименьшей отложенной потерей и её конфигурацию;
    при равенстве выигрывает более ранняя попытка.
    """
    if trials < 1:
        return ae_train(data, cfg), cfg
    rng = np.random.default_rng([seed, 7])
    best_model: AutoencoderModel | None = None
    best_cfg = cfg
    for trial in range(trials):
        lr = float(np.exp(rng.uniform(np.log(SEARCH_LR_RANGE[0]), np.log(SEARCH_LR_RANGE[1]))))
        batch_size = int(rng.choice(SEARCH_BATCH_SIZES))
        trial_cfg = cfg.model_copy(update={"learning_rate": lr, "batch_size": batch_size})
        model = ae_train(data, trial_cfg)
        logger.info(
            f"Поиск гиперпараметров: попытка {trial + 1}/{trials}, lr={lr:.2e}, "
            f"batch={batch_size}, MSE={model.final_loss:.6g}"
        )
        if best_model is None or model.final_loss < best_model.final_loss:
            best_model, best_cfg = model, trial_cfg
    assert best_model is not None
    return best_model, best_cfg


def _run_layers(model: AutoencoderModel, x: np.ndarray, layers: range) -> np.ndarray:
    num_layers = len(model.weights)
    out = x
    for i in layers:
        out = out @ model.weights[i] + model.biases[i]
        if not _is_linear_layer(i, model.encoder_depth, num_layers):
            out = np.maximum(out, 0.0)
    return out


def _check_input(x: np.ndarray, dim: int) -> np.ndarray:
    array = np.asarray(x, dtype=np.float64)
    if array.ndim not in (1, 2) or array.shape[-1] != dim:
        raise DimensionMismatch(f"Ожидалась размерность {dim}, получено {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFinite("Вход автоэнкодера содержит NaN/Inf")
    return array


def ae_encode(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    """Прямой проход только через энкодер (вектор или матрица по строкам)."""
    array = _check_input(x, model.input_dim)
    return _run_layers(model, array, range(model.encoder_depth))


def ae_decode(model: AutoencoderModel, z: np.ndarray) -> np.ndarray:
    """Прямой проход через декодер."""
    array = _check_input(z, model.latent_dim)
    return _run_layers(model, array, range(model.encoder_depth, len(model.weights)))


def ae_reconstruct(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    """Кодирование и декодирование."""
    return ae_decode(model, ae_encode(model, x))


def reconstruction_error(model: AutoencoderModel, data: np.ndarray) -> float:
    """MSE реконструкции на матрице данных."""
    matrix = _check_matrix(data, model.input_dim)
    return _mse(ae_reconstruct(model, matrix), matrix)
