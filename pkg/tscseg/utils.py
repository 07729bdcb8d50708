"""Утилиты: параллельные вычисления, сериализация массивов и атомарная запись файлов."""

import base64
import hashlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Iterable, List, Sequence, TypeVar

import numpy as np
import orjson
from joblib import Parallel, delayed

from .config import get_settings
from .errors import ModelFormatError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def parallel_map(fn: Callable[[T], R], items: Sequence[T], n_jobs: int | None = None) -> List[R]:
    """
    Применяет fn к элементам в пуле потоков joblib.

    Порядок результатов совпадает с порядком входа, поэтому последующие
    редукции детерминированы. Число потоков ограничено TSCSEG_THREADS.
    """
    items = list(items)
    if not items:
        return []
    jobs = n_jobs if n_jobs is not None else get_settings().threads
    jobs = max(1, min(jobs, len(items)))
    if jobs == 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=jobs, prefer="threads")(delayed(fn)(item) for item in items)


def dumps(payload: Any, pretty: bool = True) -> bytes:
    """Каноническая JSON-сериализация (сортированные ключи)."""
    options = JSON_OPTIONS | (orjson.OPT_INDENT_2 if pretty else 0)
    return orjson.dumps(payload, option=options)


def encode_array(array: np.ndarray) -> dict:
    """
    Кодирует массив float64 в блоб little-endian + base64.

    Returns:
        Словарь {"dtype", "shape", "data"}
    """
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    return {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(blob: dict) -> np.ndarray:
    """
    Декодирует блоб, созданный encode_array.

    Raises:
        ModelFormatError: если блоб повреждён
    """
    try:
        if blob["dtype"] != "<f8":
            raise ModelFormatError(f"Неподдерживаемый dtype блоба: {blob['dtype']}")
        raw = base64.b64decode(blob["data"].encode("ascii"), validate=True)
        shape = tuple(int(v) for v in blob["shape"])
        array = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return array.reshape(shape)
    except ModelFormatError:
        raise
    except Exception as e:
        raise ModelFormatError(f"Повреждённый блоб массива: {e}") from e


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Пишет файл через временный файл в том же каталоге и rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def fingerprint_files(paths: Iterable[Path]) -> str:
    """SHA-256 по содержимому файлов (в отсортированном порядке имён)."""
    digest = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def sha256_bytes(payload: bytes) -> str:
    """SHA-256 от байтов."""
    return hashlib.sha256(payload).hexdigest()
