"""
Файловые форматы: CSV демонстраций, разметка, манифест, директивы и файл модели.

Все записи идут через временный файл и rename; JSON пишется канонически
(сортированные ключи), поэтому сохранение → загрузка → сохранение даёт
побайтно тот же файл.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
import orjson
import pandas as pd
from pydantic import ValidationError

from .autoencoder import AutoencoderModel
from .core_model import KINEMATIC_COLUMNS, Demonstration, SegmentTrack, Standardizer
from .errors import ModelFormatError, ValidationFailed
from .gmm import GmmModel
from .hier_tsc import CandidateMembership, TransitionHierarchy
from .schemas import (
    DEFAULT_SEGMENT_COUNT,
    AssistanceDirective,
    DatasetManifest,
    HierarchyDiagnostics,
    OnlineConfig,
    TrainingConfig,
)
from .utils import atomic_write_bytes, decode_array, dumps, encode_array, fingerprint_files

logger = logging.getLogger(__name__)

MODEL_FORMAT = "tscseg-model"
MODEL_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DIRECTIVES_NAME = "directives.json"


def visual_columns(dim: int) -> List[str]:
    return [f"f{j:03d}" for j in range(dim)]


# Демонстрации и разметка


def demo_to_csv_bytes(demo: Demonstration) -> bytes:
    """CSV: t, 14 кинематических столбцов, f000..f{D-1}."""
    frame = pd.DataFrame(demo.kinematics, columns=list(KINEMATIC_COLUMNS))
    frame.insert(0, "t", demo.time_index)
    visual = pd.DataFrame(demo.visual, columns=visual_columns(demo.visual_dim))
    buffer = io.StringIO()
    pd.concat([frame, visual], axis=1).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue().encode("utf-8")


def annotations_to_csv_bytes(track: SegmentTrack) -> bytes:
    """Разметка: t, segment_label."""
    frame = pd.DataFrame(
        {"t": np.arange(len(track)) + track.start_index, "segment_label": list(track.labels)}
    )
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue().encode("utf-8")


def read_annotations(path: Path, segment_count: int = DEFAULT_SEGMENT_COUNT) -> SegmentTrack:
    """Читает CSV разметки; segment_count ограничивает число различных сегментов."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл разметки не найден: {path}")
    frame = pd.read_csv(path, dtype={"segment_label": str})
    if list(frame.columns) != ["t", "segment_label"]:
        raise ValidationFailed(f"{path}: ожидались столбцы t,segment_label, получено {list(frame.columns)}")
    start = int(frame["t"].iloc[0]) if len(frame) else 0
    try:
        return SegmentTrack.from_labels(frame["segment_label"].tolist(), start_index=start, segment_count=segment_count)
    except ValidationFailed as e:
        raise type(e)(f"{path}: {e.detail}") from e


def read_demo_csv(
    path: Path,
    demo_id: Optional[str] = None,
    sample_rate_hz: float = 30.0,
    visual_dim: Optional[int] = None,
    annotations: Optional[SegmentTrack] = None,
) -> Demonstration:
    """
    Читает CSV демонстрации и проверяет её инварианты.

    Raises:
        FileNotFoundError: файла нет
        ValidationFailed: неверный заголовок или нарушение инвариантов
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл демонстрации не найден: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    columns = list(frame.columns)
    expected = ["t", *KINEMATIC_COLUMNS]
    if columns[: len(expected)] != expected:
        raise ValidationFailed(f"{path}: заголовок должен начинаться с {','.join(expected)}")
    visual_names = columns[len(expected) :]
    dim = len(visual_names)
    if visual_names != visual_columns(dim):
        raise ValidationFailed(f"{path}: визуальные столбцы должны называться f000..f{dim - 1:03d}")
    try:
        return Demonstration.from_arrays(
            demo_id or path.stem,
            sample_rate_hz,
            frame[list(KINEMATIC_COLUMNS)].to_numpy(dtype=np.float64),
            frame[visual_names].to_numpy(dtype=np.float64),
            time_index=frame["t"].to_numpy(),
            annotations=annotations,
            visual_dim=visual_dim,
        )
    except ValidationFailed as e:
        raise type(e)(f"{path}: {e.detail}") from e


@dataclass(frozen=True, eq=False)
class Dataset:
    """Загруженный набор: манифест, демонстрации по id и каталог."""

    root: Path
    manifest: DatasetManifest
    demos: Dict[str, Demonstration]

    def split(self, name: str) -> List[Demonstration]:
        """Демонстрации части train/test/all в порядке манифеста."""
        if name == "all":
            ids = [entry.id for entry in self.manifest.demos]
        elif name in ("train", "test"):
            ids = getattr(self.manifest.split, name)
        else:
            raise ValidationFailed(f"Неизвестная часть набора: {name}")
        if not ids and name == "train":
            if self.manifest.split.test:
                raise ValidationFailed("Обучающая часть манифеста пуста, а тестовая нет: обучать не на чем")
            logger.warning("⚠️ Разбиение в манифесте не задано, для обучения берутся все демонстрации")
            ids = [entry.id for entry in self.manifest.demos]
        return [self.demos[demo_id] for demo_id in ids]

    @property
    def files(self) -> List[Path]:
        paths = []
        for entry in self.manifest.demos:
            paths.append(self.root / entry.file)
            if entry.annotations:
                paths.append(self.root / entry.annotations)
        return paths

    @property
    def fingerprint(self) -> str:
        return fingerprint_files(self.files)

    @property
    def directives_path(self) -> Optional[Path]:
        if self.manifest.directives and (self.root / self.manifest.directives).exists():
            return self.root / self.manifest.directives
        return None


def read_manifest(path: Path) -> DatasetManifest:
    """Читает и валидирует manifest.json."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Манифест не найден: {path}")
    try:
        return DatasetManifest.model_validate(orjson.loads(path.read_bytes()))
    except orjson.JSONDecodeError as e:
        raise ValidationFailed(f"{path}: некорректный JSON: {e}") from e
    except ValidationError as e:
        raise ValidationFailed(f"{path}: манифест не прошёл проверку: {e}") from e


def load_dataset(root: Path) -> Dataset:
    """Загружает набор по каталогу с manifest.json."""
    root = Path(root)
    manifest = read_manifest(root / MANIFEST_NAME)
    demos = {}
    for entry in manifest.demos:
        track = (
            read_annotations(root / entry.annotations, manifest.segment_count) if entry.annotations else None
        )
        demos[entry.id] = read_demo_csv(
            root / entry.file, entry.id, manifest.sample_rate_hz, manifest.visual_dim, track
        )
    logger.info(f"Загружен набор {root}: {len(demos)} демонстраций")
    return Dataset(root=root, manifest=manifest, demos=demos)


def save_dataset(
    root: Path,
    demos: List[Demonstration],
    manifest: DatasetManifest,
    directives: Optional[Mapping[str, Optional[AssistanceDirective]]] = None,
) -> List[Path]:
    """
    Записывает набор: CSV демонстраций, разметку, директивы и манифест.

    Все файлы сериализуются в памяти до первой записи на диск.
    """
    root = Path(root)
    by_id = {demo.id: demo for demo in demos}
    payloads: Dict[Path, bytes] = {}
    for entry in manifest.demos:
        demo = by_id[entry.id]
        payloads[root / entry.file] = demo_to_csv_bytes(demo)
        if entry.annotations:
            if demo.annotations is None:
                raise ValidationFailed(f"У демонстрации {demo.id} нет разметки для {entry.annotations}")
            payloads[root / entry.annotations] = annotations_to_csv_bytes(demo.annotations)
    if directives is not None and manifest.directives:
        payloads[root / manifest.directives] = directives_to_bytes(directives)
    payloads[root / MANIFEST_NAME] = dumps(manifest.model_dump(mode="json"))
    for path, payload in payloads.items():
        atomic_write_bytes(path, payload)
    return list(payloads)


# Директивы


def directives_to_bytes(directives: Mapping[str, Optional[AssistanceDirective]]) -> bytes:
    payload = {
        label: None
        if directive is None
        else {"orientation": directive.target_orientation, "gripper": directive.gripper_command}
        for label, directive in directives.items()
    }
    return dumps(payload)


def load_directives(path: Path) -> Dict[str, Optional[AssistanceDirective]]:
    """
    Читает директивы ``{"T1": {"orientation": [w,x,y,z], "gripper": "close"}, "T2": null}``.

    null означает явное отсутствие директивы.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл директив не найден: {path}")
    try:
        payload = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ValidationFailed(f"{path}: некорректный JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ValidationFailed(f"{path}: ожидался JSON-объект с метками переходов")
    directives: Dict[str, Optional[AssistanceDirective]] = {}
    for label, entry in payload.items():
        if entry is None:
            directives[label] = None
            continue
        try:
            directives[label] = AssistanceDirective(
                transition=label, target_orientation=entry["orientation"], gripper_command=entry.get("gripper", "hold")
            )
        except (KeyError, TypeError, ValidationError) as e:
            raise ValidationFailed(f"{path}: некорректная директива {label}: {e}") from e
    return directives


# Файл модели


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Обученная модель: иерархия (с автоэнкодером и стандартизацией), конфигурация и отпечаток набора."""

    hierarchy: TransitionHierarchy
    training_config: TrainingConfig
    dataset_fingerprint: str = ""
    format_version: int = MODEL_FORMAT_VERSION

    @property
    def online_config(self) -> OnlineConfig:
        return self.training_config.online


def _gmm_payload(model: GmmModel) -> dict:
    return {
        "weights": encode_array(model.weights),
        "means": encode_array(model.means),
        "covariances": encode_array(model.covariances),
        "fit_log_likelihood": model.fit_log_likelihood,
        "covariance_regularization": model.covariance_regularization,
        "ll_history": list(model.ll_history),
    }


def _gmm_from_payload(payload: dict) -> GmmModel:
    return GmmModel(
        weights=decode_array(payload["weights"]),
        means=decode_array(payload["means"]),
        covariances=decode_array(payload["covariances"]),
        fit_log_likelihood=float("nan") if payload["fit_log_likelihood"] is None else payload["fit_log_likelihood"],
        covariance_regularization=payload["covariance_regularization"],
        ll_history=tuple(payload["ll_history"]),
    )


def _autoencoder_payload(model: Optional[AutoencoderModel]) -> Optional[dict]:
    if model is None:
        return None
    return {
        "encoder_depth": model.encoder_depth,
        "weights": [encode_array(w) for w in model.weights],
        "biases": [encode_array(b) for b in model.biases],
        "loss_history": list(model.loss_history),
        "checkpoint_history": list(model.checkpoint_history),
        "best_epoch": model.best_epoch,
    }


def _autoencoder_from_payload(payload: Optional[dict]) -> Optional[AutoencoderModel]:
    if payload is None:
        return None
    return AutoencoderModel(
        weights=tuple(decode_array(blob) for blob in payload["weights"]),
        biases=tuple(decode_array(blob) for blob in payload["biases"]),
        encoder_depth=payload["encoder_depth"],
        loss_history=tuple(payload["loss_history"]),
        checkpoint_history=tuple(payload["checkpoint_history"]),
        best_epoch=payload["best_epoch"],
    )


def bundle_payload(bundle: ModelBundle) -> dict:
    """JSON-представление модели."""
    h = bundle.hierarchy
    return {
        "format": MODEL_FORMAT,
        "format_version": bundle.format_version,
        "dataset_fingerprint": bundle.dataset_fingerprint,
        "training_config": bundle.training_config.model_dump(mode="json"),
        "autoencoder": _autoencoder_payload(h.encoder),
        "standardizer": {
            "mean": encode_array(h.standardizer.mean),
            "std": encode_array(h.standardizer.std),
            "epsilon_std": h.standardizer.epsilon_std,
        },
        "hierarchy": {
            "canonical_order": list(h.canonical_order),
            "num_demos": h.num_demos,
            "visual_model": _gmm_payload(h.visual_model),
            "kinematic_models": {str(vi): _gmm_payload(model) for vi, model in sorted(h.kinematic_models.items())},
            "label_map": [
                {"visual": vi, "kinematic": ki, "label": label} for (vi, ki), label in sorted(h.label_map.items())
            ],
            "pruned": sorted([list(key) for key in h.pruned]),
            "memberships": [
                [m.demo_id, m.time_index, m.normalized_time, m.visual_cluster, m.kinematic_cluster]
                for m in h.memberships
            ],
            "diagnostics": h.diagnostics.model_dump(mode="json"),
        },
    }


def bundle_bytes(bundle: ModelBundle) -> bytes:
    """Каноническая сериализация модели."""
    return dumps(bundle_payload(bundle))


def bundle_from_payload(payload: dict) -> ModelBundle:
    """
    Восстанавливает модель из JSON.

    Raises:
        ModelFormatError: неизвестный формат/версия или повреждённое содержимое
    """
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ModelFormatError("Файл не является моделью tscseg")
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"Неподдерживаемая версия формата модели: {version}")
    try:
        hp = payload["hierarchy"]
        std = payload["standardizer"]
        standardizer = Standardizer(
            mean=decode_array(std["mean"]), std=decode_array(std["std"]), epsilon_std=std["epsilon_std"]
        )
        hierarchy = TransitionHierarchy(
            visual_model=_gmm_from_payload(hp["visual_model"]),
            kinematic_models={int(vi): _gmm_from_payload(m) for vi, m in hp["kinematic_models"].items()},
            standardizer=standardizer,
            encoder=_autoencoder_from_payload(payload["autoencoder"]),
            canonical_order=tuple(hp["canonical_order"]),
            memberships=tuple(
                CandidateMembership(
                    demo_id=row[0],
                    time_index=row[1],
                    normalized_time=row[2],
                    visual_cluster=row[3],
                    kinematic_cluster=row[4],
                )
                for row in hp["memberships"]
            ),
            num_demos=hp["num_demos"],
            label_map={(row["visual"], row["kinematic"]): row["label"] for row in hp["label_map"]},
            pruned=frozenset(tuple(key) for key in hp["pruned"]),
            diagnostics=HierarchyDiagnostics.model_validate(hp["diagnostics"]),
        )
        config = TrainingConfig.model_validate(payload["training_config"])
    except ModelFormatError:
        raise
    except (KeyError, TypeError, IndexError, ValueError, ValidationError) as e:
        raise ModelFormatError(f"Повреждённый файл модели: {e}") from e
    return ModelBundle(
        hierarchy=hierarchy,
        training_config=config,
        dataset_fingerprint=payload.get("dataset_fingerprint", ""),
        format_version=version,
    )


def save_bundle(bundle: ModelBundle, path: Path) -> bytes:
    """Атомарно записывает модель; возвращает записанные байты."""
    payload = bundle_bytes(bundle)
    atomic_write_bytes(Path(path), payload)
    logger.info(f"Модель сохранена: {path} ({len(payload)} байт)")
    return payload


def load_bundle(path: Path) -> ModelBundle:
    """Загружает модель из файла."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл модели не найден: {path}")
    try:
        payload = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: файл модели не является JSON: {e}") from e
    return bundle_from_payload(payload)
