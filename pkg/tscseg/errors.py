"""Исключения пакета tscseg.

Каждое исключение несёт человекочитаемое ``detail`` и код выхода CLI
(по аналогии со ``status_code`` у HTTP-исключений):
1: ошибка валидации входных данных, 2: ошибка выполнения,
3: не пройдены пороги приёмки.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3


class TscsegError(Exception):
    """Базовое исключение пакета."""

    exit_code: int = EXIT_RUNTIME

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def with_stage(self, stage: str) -> "TscsegError":
        """Добавляет к сообщению имя стадии конвейера, сохраняя класс ошибки."""
        self.detail = f"[{stage}] {self.detail}"
        self.args = (self.detail,)
        return self


# Ошибки валидации (код 1)


class ValidationFailed(TscsegError):
    """Входные данные не прошли проверку."""

    exit_code = EXIT_VALIDATION


class UsageError(ValidationFailed):
    """Некорректные аргументы командной строки."""


class EmptyDataset(ValidationFailed):
    """Нет ни одного состояния для обработки."""


class NonFinite(ValidationFailed):
    """Во входных данных или в процессе обучения появились NaN/Inf."""


class DimensionMismatch(ValidationFailed):
    """Размерность вектора не совпадает с ожидаемой."""


class InvalidDemonstration(ValidationFailed):
    """Демонстрация нарушает инвариант типа."""


class TooShort(ValidationFailed):
    """Демонстрация слишком короткая для окна детектора."""


class TooFewPoints(ValidationFailed):
    """Точек меньше, чем компонент смеси."""


class TooFewCandidates(ValidationFailed):
    """Кандидатов переходов недостаточно для построения иерархии."""


class SingleCluster(ValidationFailed):
    """Для силуэта нужно как минимум два кластера."""


class LengthMismatch(ValidationFailed):
    """Длины сравниваемых треков не совпадают."""


class MissingDirective(ValidationFailed):
    """Для размеченного перехода нет директивы ассистирования."""


class ModelFormatError(ValidationFailed):
    """Файл модели повреждён или имеет неподдерживаемую версию."""


# Ошибки выполнения (код 2)


class DegenerateComponent(TscsegError):
    """Ковариация компоненты не раскладывается по Холецкому даже после регуляризации."""


class AllDegenerate(TscsegError):
    """Ни одно значение k не удалось обучить."""


class AllPruned(TscsegError):
    """После прореживания не осталось ни одного подкластера."""


class NoSurvivors(TscsegError):
    """Нечего размечать: выживших подкластеров нет."""


class NoSamples(TscsegError):
    """Сессия ещё не сделала ни одного шага."""


class TrainingFailed(TscsegError):
    """Обучение разошлось."""


# Приёмка (код 3)


class AcceptanceFailure(TscsegError):
    """Метрики ниже заданных порогов приёмки."""

    exit_code = EXIT_ACCEPTANCE
