"""Команда segment: офлайн-сегментация одной демонстрации."""

import argparse
from pathlib import Path

from ..hier_tsc import segment_demonstration
from ..storage import annotations_to_csv_bytes, load_bundle, read_demo_csv
from . import add_online_flags, online_config, resolve_directives, write_output


def register(subparsers) -> None:
    parser = subparsers.add_parser("segment", help="сегментировать демонстрацию")
    parser.add_argument("--model", type=Path, required=True)
    parser.add_argument("--demo", type=Path, required=True, help="CSV демонстрации")
    parser.add_argument("--out", type=Path, default=None, help="CSV t,segment_label (по умолчанию stdout)")
    add_online_flags(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    directives = resolve_directives(bundle, args.directives)
    demo = read_demo_csv(args.demo)
    track = segment_demonstration(bundle.hierarchy, demo, directives, online_config(bundle, args))
    write_output(annotations_to_csv_bytes(track), args.out)
    return 0
