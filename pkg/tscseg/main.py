"""Точка входа CLI tscseg."""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from .commands import bench, evaluate, generate, segment, stream, train
from .config import get_settings
from .errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, TscsegError, UsageError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """argparse, который вместо выхода с кодом 2 поднимает UsageError (код 1)."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(level: Optional[str] = None) -> None:
    """Один обработчик в stderr; stdout остаётся для машиночитаемого вывода."""
    level_name = level or get_settings().log_level
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level_name, logging.INFO))
    logging.getLogger("joblib").setLevel(logging.WARNING)
    logging.getLogger("numexpr").setLevel(logging.WARNING)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="tscseg", description="Иерархическая кластеризация переходных состояний")
    parser.add_argument("--log-level", default=None, help="уровень логирования (по умолчанию TSCSEG_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    for command in (generate, train, segment, stream, evaluate, bench):
        command.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Разбирает аргументы, выполняет команду и переводит исключения в коды выхода.

    0 успех, 1 ошибка валидации, 2 ошибка выполнения, 3 не пройдены пороги приёмки.
    """
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level.upper() if args.log_level else None)
        result = args.handler(args)
        return EXIT_OK if result is None else int(result)
    except TscsegError as e:
        logger.error(f"❌ {type(e).__name__}: {e.detail}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"❌ Ошибка валидации: {e}")
        return EXIT_VALIDATION
    except OSError as e:
        path = getattr(e, "filename", None)
        logger.error(f"❌ Ошибка ввода-вывода{f' ({path})' if path else ''}: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"❌ Необработанное исключение: {type(e).__name__}: {e}", exc_info=True)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
