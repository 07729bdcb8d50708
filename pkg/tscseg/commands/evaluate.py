"""Команда eval: отчёт точности сегментации и проверка порогов приёмки."""

import argparse
import logging
import sys
from pathlib import Path

from ..config import get_settings
from ..eval_bench import DEFAULT_WINDOW, check_acceptance, evaluate, render_report, run_benchmark
from ..storage import load_bundle, load_dataset
from ..utils import dumps
from . import add_online_flags, online_config, positive_int, resolve_directives, write_output

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="оценить модель на наборе")
    parser.add_argument("--model", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True, help="каталог набора с manifest.json")
    parser.add_argument("--split", choices=["train", "test", "all"], default="train")
    parser.add_argument("--window", type=positive_int, default=DEFAULT_WINDOW, help="допуск сопоставления событий, кадры")
    parser.add_argument("--out", type=Path, default=None, help="файл для JSON-отчёта (по умолчанию stdout)")
    parser.add_argument("--min-accuracy", type=float, default=None, help="порог средней точности")
    parser.add_argument("--reps", type=positive_int, default=None, help="добавить в отчёт замер задержки")
    add_online_flags(parser)
    parser.set_defaults(handler=handle)


def _threshold(split: str, explicit) -> float:
    if explicit is not None:
        return explicit
    settings = get_settings()
    return settings.min_train_accuracy if split == "train" else settings.min_test_accuracy


def handle(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    dataset = load_dataset(args.data)
    if bundle.dataset_fingerprint and bundle.dataset_fingerprint != dataset.fingerprint:
        logger.warning(f"Отпечаток набора {args.data} не совпадает с набором, на котором обучалась модель")

    directives_path = args.directives if args.directives is not None else dataset.directives_path
    directives = resolve_directives(bundle, directives_path)
    demos = dataset.split(args.split)
    report = evaluate(
        bundle,
        demos,
        window=args.window,
        split=args.split,
        directives=directives,
        online_cfg=online_config(bundle, args),
    )
    if args.reps is not None:
        report = report.model_copy(update={"latency": run_benchmark(bundle, demos, args.reps, directives)})

    write_output(dumps(report.model_dump(mode="json")), args.out)
    # текстовая сводка не смешивается с JSON в stdout
    print(render_report(report), file=sys.stdout if args.out is not None else sys.stderr)
    check_acceptance(report, _threshold(args.split, args.min_accuracy))
    return 0
