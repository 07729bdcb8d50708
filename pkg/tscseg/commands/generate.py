"""Команда generate: синтетический набор демонстраций."""

import argparse
import logging
from pathlib import Path

from ..errors import UsageError
from ..schemas import SimConfig
from ..simgen import default_directives, generate_dataset
from ..storage import save_dataset
from ..utils import dumps
from . import write_output

logger = logging.getLogger(__name__)


def parse_split(value: str) -> list:
    """TRAIN:TEST → [train, test]."""
    try:
        train, test = (int(part) for part in value.split(":"))
    except ValueError:
        raise UsageError(f"--split ожидает формат TRAIN:TEST, получено {value!r}")
    return [train, test]


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="сгенерировать синтетические демонстрации")
    parser.add_argument("--demos", type=int, default=14, help="число демонстраций")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True, help="каталог набора")
    parser.add_argument("--noise", type=float, default=0.002, help="СКО шума кинематики")
    parser.add_argument("--split", type=parse_split, default=None, help="TRAIN:TEST")
    parser.add_argument("--raw-dim", type=int, default=512, help="размерность сырых визуальных признаков")
    parser.add_argument("--latent-dim", type=int, default=128, help="размерность латентных визуальных мод")
    parser.add_argument("--jitter-rate", type=float, default=0.0, help="среднее число ложных рывков на демонстрацию")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    if args.demos < 1:
        raise UsageError(f"--demos должно быть не меньше 1, получено {args.demos}")
    if args.noise < 0:
        raise UsageError(f"--noise должно быть неотрицательным, получено {args.noise}")
    cfg = SimConfig(
        num_demos=args.demos,
        seed=args.seed,
        kinematic_noise_std=args.noise,
        split=args.split,
        raw_dim=args.raw_dim,
        latent_dim=args.latent_dim,
        spurious_jitter_rate=args.jitter_rate,
    )
    demos, manifest = generate_dataset(cfg)
    save_dataset(args.out, demos, manifest, default_directives())
    logger.info(f"Набор записан в {args.out}")
    write_output(
        dumps({"out": str(args.out), "demos": len(demos), "split": manifest.split.model_dump()}, pretty=False),
        None,
    )
    return 0
