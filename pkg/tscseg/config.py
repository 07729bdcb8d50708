"""Модуль конфигурации приложения."""

import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any

import orjson
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ValidationFailed
from .schemas import TrainingConfig

ROOT_DIR = Path(__file__).resolve().parents[1]
ENV_PATH = ROOT_DIR / ".env"

logger = logging.getLogger(__name__)


def _parse_positive_int(value: Any) -> int | None:
    """
    Парсит значение в положительное целое.
    Пустые строки и мусор трактуются как «не задано».
    """
    if value is None:
        return None
    if isinstance(value, int):
        return value if value > 0 else None
    str_value = str(value).strip()
    if not str_value:
        return None
    try:
        parsed = int(str_value)
    except ValueError:
        logger.warning(f"Некорректное значение TSCSEG_THREADS={str_value!r}, используем значение по умолчанию")
        return None
    return parsed if parsed > 0 else None


class Settings(BaseSettings):
    """Настройки окружения."""

    # TSCSEG_THREADS ограничивает внутренний параллелизм
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1)
    log_level: str = "INFO"
    # Пороги приёмки для команды eval, если не переданы флагами
    min_train_accuracy: float = Field(0.85, ge=0.0, le=1.0)
    min_test_accuracy: float = Field(0.80, ge=0.0, le=1.0)

    @field_validator("threads", mode="before")
    @classmethod
    def parse_threads(cls, value):
        """Пустое или некорректное значение заменяется числом ядер."""
        parsed = _parse_positive_int(value)
        return parsed if parsed is not None else (os.cpu_count() or 1)

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, value):
        """Приводит уровень логирования к верхнему регистру."""
        if not value:
            return "INFO"
        return str(value).strip().upper()

    model_config = SettingsConfigDict(
        env_file=str(ENV_PATH) if ENV_PATH.exists() else None,
        env_file_encoding="utf-8",
        env_prefix="TSCSEG_",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    """Получить настройки окружения."""
    try:
        settings = Settings()
    except Exception as e:
        logger.error(f"❌ Ошибка при создании Settings: {e}", exc_info=True)
        raise
    logger.debug(f"Настройки: threads={settings.threads}, log_level={settings.log_level}")
    return settings


def load_training_config(path: Path | None) -> TrainingConfig:
    """
    Загружает JSON-файл конфигурации обучения.

    Все поля необязательны; отсутствующие берутся из значений по умолчанию.

    Raises:
        ValidationFailed: если файл не найден или не является JSON-объектом
    """
    if path is None:
        return TrainingConfig()
    path = Path(path)
    if not path.exists():
        raise ValidationFailed(f"Файл конфигурации не найден: {path}")
    try:
        payload = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ValidationFailed(f"Файл конфигурации {path} не является корректным JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ValidationFailed(f"Файл конфигурации {path} должен содержать JSON-объект")
    try:
        return TrainingConfig.model_validate(payload)
    except ValidationError as e:
        raise ValidationFailed(f"Файл конфигурации {path} не прошёл проверку: {e}") from e
