"""Команда stream: покадровые решения в формате JSON Lines."""

import argparse
import logging
import sys
from pathlib import Path

import orjson

from ..errors import ValidationFailed
from ..online_segmenter import decision_from_frame, stream_new
from ..storage import load_bundle, read_demo_csv
from ..utils import atomic_write_bytes
from . import add_online_flags, online_config, resolve_directives

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("stream", help="потоковая сегментация (JSON Lines в stdout)")
    parser.add_argument("--model", type=Path, required=True)
    parser.add_argument("--demo", type=Path, default=None, help="CSV демонстрации; без флага кадры читаются из stdin")
    parser.add_argument("--out", type=Path, default=None, help="файл для записей (по умолчанию stdout)")
    add_online_flags(parser)
    parser.set_defaults(handler=handle)


def _frames_from_demo(path: Path):
    demo = read_demo_csv(path)
    for i in range(demo.num_frames):
        yield {"t": int(demo.time_index[i]), "kinematic": demo.kinematics[i], "visual": demo.visual[i]}


def _frames_from_stdin():
    for number, line in enumerate(sys.stdin.buffer, start=1):
        if not line.strip():
            continue
        try:
            yield orjson.loads(line)
        except orjson.JSONDecodeError as e:
            raise ValidationFailed(f"stdin, строка {number}: некорректный JSON: {e}") from e


def handle(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    directives = resolve_directives(bundle, args.directives)
    session = stream_new(bundle.hierarchy, directives, online_config(bundle, args))
    frames = _frames_from_demo(args.demo) if args.demo is not None else _frames_from_stdin()
    records = []
    for frame in frames:
        decision = decision_from_frame(session, frame)
        line = orjson.dumps(decision.to_record(), option=orjson.OPT_SORT_KEYS) + b"\n"
        if args.out is None:
            sys.stdout.buffer.write(line)
            sys.stdout.flush()
        else:
            records.append(line)
    if args.out is not None:
        atomic_write_bytes(args.out, b"".join(records))
    logger.info(f"Обработано кадров: {session.steps}, событий: {len(session.emitted)}")
    return 0
