"""Команда bench: задержка потоковой сегментации по стадиям."""

import argparse
from pathlib import Path

from ..eval_bench import render_latency_table, run_benchmark
from ..storage import load_bundle, load_dataset, read_demo_csv
from ..utils import dumps
from . import positive_int, resolve_directives, write_output


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="замерить задержку онлайн-сегментации")
    parser.add_argument("--model", type=Path, required=True)
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", type=Path, help="каталог набора с manifest.json")
    source.add_argument("--demo", type=Path, help="CSV одной демонстрации")
    parser.add_argument("--split", choices=["train", "test", "all"], default="all")
    parser.add_argument("--reps", type=positive_int, default=1, help="число проходов по данным")
    parser.add_argument(
        "--encoded", action="store_true", help="кодировать кадры заранее; стадия feature_encode не входит в total"
    )
    parser.add_argument("--directives", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=None, help="файл для JSON-таблицы")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    if args.data is not None:
        dataset = load_dataset(args.data)
        demos = dataset.split(args.split)
        directives_path = args.directives or dataset.directives_path
    else:
        demos = [read_demo_csv(args.demo)]
        directives_path = args.directives
    directives = resolve_directives(bundle, directives_path)
    table = run_benchmark(bundle, demos, args.reps, directives, encoded_input=args.encoded)
    if args.out is not None:
        write_output(dumps(table.model_dump(mode="json")), args.out)
    print(render_latency_table(table))
    return 0
