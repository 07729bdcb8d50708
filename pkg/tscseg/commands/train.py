"""Команда train: обучение модели и запись файла модели."""

import argparse
import logging
from pathlib import Path

from ..config import load_training_config
from ..pipeline import train_bundle
from ..storage import load_dataset, save_bundle
from ..utils import dumps
from . import write_output

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="обучить иерархию переходов")
    parser.add_argument("--data", type=Path, required=True, help="каталог набора с manifest.json")
    parser.add_argument("--config", type=Path, default=None, help="JSON с конфигурацией обучения")
    parser.add_argument("--out", type=Path, required=True, help="файл модели")
    parser.add_argument("--seed", type=int, default=None, help="общий seed всех генераторов")
    parser.add_argument("--ae-search", type=int, default=None, help="число попыток случайного поиска автоэнкодера")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    cfg = load_training_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.ae_search is not None:
        cfg = cfg.model_copy(update={"ae_search_trials": max(0, args.ae_search)})
    dataset = load_dataset(args.data)
    demos = dataset.split("train")
    bundle = train_bundle(demos, cfg, dataset.fingerprint)
    save_bundle(bundle, args.out)
    h = bundle.hierarchy
    # кривые силуэта и прореживание
    write_output(
        dumps(
            {
                "model": str(args.out),
                "labels": h.assigned_labels,
                "extras": h.extra_labels,
                "diagnostics": h.diagnostics.model_dump(mode="json"),
            }
        ),
        None,
    )
    return 0
