"""Команды CLI. Каждый модуль регистрирует свой подпарсер через register(subparsers)."""

import argparse
import sys
from pathlib import Path
from typing import Dict, Optional

from ..errors import UsageError
from ..schemas import AssistanceDirective, OnlineConfig
from ..storage import ModelBundle, load_directives
from ..utils import atomic_write_bytes


def positive_int(value: str) -> int:
    """Тип argparse: целое >= 1."""
    try:
        parsed = int(value)
    except ValueError:
        raise UsageError(f"ожидалось целое число, получено {value!r}")
    if parsed < 1:
        raise UsageError(f"ожидалось положительное число, получено {parsed}")
    return parsed


def add_online_flags(parser: argparse.ArgumentParser) -> None:
    """Флаги, переопределяющие параметры онлайн-сегментатора из модели."""
    parser.add_argument("--directives", type=Path, default=None, help="JSON с директивами по меткам переходов")
    parser.add_argument("--hysteresis", type=positive_int, default=None, help="число кадров гистерезиса H")
    parser.add_argument("--posterior-floor", type=float, default=None, help="минимальная апостериорная вероятность")
    parser.add_argument(
        "--policy", choices=["suppress", "emit_with_flag"], default=None, help="реакция на нарушение порядка"
    )


def online_config(bundle: ModelBundle, args: argparse.Namespace) -> OnlineConfig:
    """Конфигурация онлайн-сегментатора модели с учётом флагов."""
    update = {}
    if args.hysteresis is not None:
        update["hysteresis"] = args.hysteresis
    if args.posterior_floor is not None:
        update["posterior_floor"] = args.posterior_floor
    if args.policy is not None:
        update["out_of_order_policy"] = args.policy
    cfg = bundle.online_config
    return OnlineConfig.model_validate({**cfg.model_dump(), **update}) if update else cfg


def resolve_directives(bundle: ModelBundle, path: Optional[Path]) -> Dict[str, Optional[AssistanceDirective]]:
    """Директивы из файла; без файла у каждой метки явное отсутствие директивы."""
    if path is not None:
        return load_directives(path)
    return {label: None for label in bundle.hierarchy.assigned_labels}


def write_output(payload: bytes, out: Optional[Path]) -> None:
    """Пишет результат в файл (атомарно) или в stdout."""
    if out is None:
        sys.stdout.buffer.write(payload)
        if not payload.endswith(b"\n"):
            sys.stdout.buffer.write(b"\n")
        sys.stdout.flush()
    else:
        atomic_write_bytes(out, payload)
