"""
Генератор синтетических демонстраций pick-and-place.

Сценарий из 9 сегментов и 8 переходов: подход к левой точке, захват,
перенос вправо, отпускание, возврат в центр, подход вправо, захват,
перенос влево, отпускание. Движущиеся сегменты имеют постоянную линейную
и угловую скорость, в сегментах-паузах меняется только угол схвата.
Визуальные признаки задаются модами в латентном пространстве и
поднимаются фиксированным линейным отображением в сырое пространство.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation, Slerp

from .core_model import GRIPPER, ORIENTATION, POSITION, Demonstration, SegmentTrack
from .errors import ValidationFailed
from .schemas import KINEMATIC_DIM, AssistanceDirective, DatasetManifest, DatasetSplit, DemoEntry, SimConfig

logger = logging.getLogger(__name__)

WAYPOINTS: Dict[str, Tuple[float, float, float]] = {
    "C": (0.0, 0.0, 0.15),
    "L": (-0.25, 0.1, 0.05),
    "R": (0.25, 0.1, 0.05),
}
GRIPPER_OPEN = 0.8
GRIPPER_CLOSED = 0.1
NUM_VISUAL_MODES = 4


@dataclass(frozen=True)
class SegmentSpec:
    """Описание сегмента сценария."""

    name: str
    kind: str
    waypoint: str
    gripper: float
    # ориентация в конце сегмента, углы xyz в градусах
    orientation_deg: Tuple[float, float, float]
    visual_mode: int


INITIAL_ORIENTATION_DEG = (0.0, 0.0, 0.0)

SEGMENT_SCRIPT: Tuple[SegmentSpec, ...] = (
    SegmentSpec("S1", "move", "L", GRIPPER_OPEN, (0.0, 25.0, -15.0), 1),
    SegmentSpec("S2", "grasp", "L", GRIPPER_CLOSED, (0.0, 25.0, -15.0), 0),
    SegmentSpec("S3", "move", "R", GRIPPER_CLOSED, (0.0, -20.0, 20.0), 1),
    SegmentSpec("S4", "release", "R", GRIPPER_OPEN, (0.0, -20.0, 20.0), 0),
    SegmentSpec("S5", "move", "C", GRIPPER_OPEN, (10.0, 0.0, 0.0), 1),
    SegmentSpec("S6", "move", "R", GRIPPER_OPEN, (0.0, -20.0, 25.0), 3),
    SegmentSpec("S7", "grasp", "R", GRIPPER_CLOSED, (0.0, -20.0, 25.0), 2),
    SegmentSpec("S8", "move", "L", GRIPPER_CLOSED, (0.0, 25.0, -20.0), 3),
    SegmentSpec("S9", "release", "L", GRIPPER_OPEN, (0.0, 25.0, -20.0), 2),
)
TRANSITION_LABELS = tuple(f"T{i}" for i in range(1, len(SEGMENT_SCRIPT)))


def _wxyz(rotation: Rotation) -> np.ndarray:
    """Кватернион scipy (x, y, z, w) в порядке (w, x, y, z) с w >= 0."""
    xyzw = np.atleast_2d(rotation.as_quat())
    wxyz = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    return np.where(wxyz[:, :1] < 0, -wxyz, wxyz)


def _rotation(orientation_deg: Sequence[float]) -> Rotation:
    return Rotation.from_euler("xyz", orientation_deg, degrees=True)


@dataclass(frozen=True, eq=False)
class SharedScene:
    """Общие для всего набора моды латентного пространства и отображение в сырое."""

    mode_means: np.ndarray
    lift: np.ndarray


def visual_mode_means(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Средние визуальных мод: масштабированные ортонормированные векторы.

    Попарное расстояние между средними равно visual_separation · visual_noise_radius
    (radius: среднеквадратичный радиус моды); при нулевом радиусе берётся 1.
    """
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.latent_dim, NUM_VISUAL_MODES)))
    radius = cfg.visual_noise_radius if cfg.visual_noise_radius > 0 else 1.0
    scale = cfg.visual_separation * radius / np.sqrt(2.0)
    return (basis * scale).T


def shared_scene(cfg: SimConfig) -> SharedScene:
    """Моды и отображение в сырое пространство от генератора (seed, 0)."""
    rng = np.random.default_rng([cfg.seed, 0])
    means = visual_mode_means(cfg, rng)
    lift = rng.normal(size=(cfg.raw_dim, cfg.latent_dim)) / np.sqrt(cfg.raw_dim)
    return SharedScene(mode_means=means, lift=lift)


def segment_durations(cfg: SimConfig, rng: np.random.Generator) -> List[int]:
    """Номинальные длительности с равномерным разбросом ±duration_jitter."""
    nominal = np.asarray(cfg.segment_durations, dtype=np.float64)
    factors = 1.0 + rng.uniform(-cfg.duration_jitter, cfg.duration_jitter, size=nominal.size)
    return [max(4, int(round(d))) for d in nominal * factors]


def _clean_kinematics(durations: Sequence[int], dt: float) -> Tuple[np.ndarray, List[str]]:
    """Кинематика без шума и покадровые метки сегментов."""
    total = int(sum(durations))
    kin = np.zeros((total, KINEMATIC_DIM))
    labels: List[str] = []
    position = np.asarray(WAYPOINTS["C"], dtype=np.float64)
    rotation = _rotation(INITIAL_ORIENTATION_DEG)
    gripper = GRIPPER_OPEN
    frame = 0
    for spec, n in zip(SEGMENT_SCRIPT, durations):
        steps = np.arange(1, n + 1) / n
        if spec.kind == "move":
            target = np.asarray(WAYPOINTS[spec.waypoint], dtype=np.float64)
            end_rotation = _rotation(spec.orientation_deg)
            positions = position + np.outer(steps, target - position)
            velocity = (target - position) / (n * dt)
            slerp = Slerp([0.0, 1.0], Rotation.concatenate([rotation, end_rotation]))
            quats = _wxyz(slerp(steps))
            angular = (end_rotation * rotation.inv()).as_rotvec() / (n * dt)
            grippers = np.full(n, gripper)
            position, rotation = target, end_rotation
        else:
            positions = np.tile(position, (n, 1))
            velocity = np.zeros(3)
            quats = np.tile(_wxyz(rotation), (n, 1))
            angular = np.zeros(3)
            grippers = gripper + steps * (spec.gripper - gripper)
            gripper = spec.gripper
        block = slice(frame, frame + n)
        kin[block, POSITION] = positions
        kin[block, 3:6] = velocity
        kin[block, 6:9] = angular
        kin[block, ORIENTATION] = quats
        kin[block, GRIPPER] = grippers
        labels.extend([spec.name] * n)
        frame += n
    return kin, labels


def _visual_features(
    cfg: SimConfig, scene: SharedScene, labels: Sequence[str], rng: np.random.Generator
) -> np.ndarray:
    modes = {spec.name: spec.visual_mode for spec in SEGMENT_SCRIPT}
    index = np.array([modes[label] for label in labels])
    latent = scene.mode_means[index]
    latent = latent + rng.normal(scale=cfg.visual_noise_radius / np.sqrt(cfg.latent_dim), size=latent.shape)
    raw = latent @ scene.lift.T
    return raw + rng.normal(scale=cfg.raw_noise_radius / np.sqrt(cfg.raw_dim), size=raw.shape)


def _jitter_frames(track: SegmentTrack, num_frames: int, count: int, margin: int, rng: np.random.Generator) -> List[int]:
    """Кадры для ложных рывков вдали от истинных переходов."""
    allowed = np.ones(num_frames, dtype=bool)
    allowed[:margin] = False
    allowed[num_frames - margin :] = False
    for t, _ in track.transition_events:
        frame = t - track.start_index
        allowed[max(0, frame - margin) : frame + margin + 1] = False
    candidates = np.flatnonzero(allowed)
    if candidates.size == 0 or count == 0:
        return []
    return sorted(int(f) for f in rng.choice(candidates, size=min(count, candidates.size), replace=False))


def inject_spurious_jitter(
    demo: Demonstration, frames: Sequence[int], magnitude: float, rng: Optional[np.random.Generator] = None
) -> Demonstration:
    """Добавляет однокадровые рывки положения инструмента в указанных кадрах."""
    rng = rng if rng is not None else np.random.default_rng(0)
    kin = np.array(demo.kinematics)
    for frame in frames:
        direction = rng.normal(size=3)
        kin[frame, POSITION] += magnitude * direction / np.linalg.norm(direction)
    return Demonstration.from_arrays(
        demo.id, demo.sample_rate_hz, kin, demo.visual, time_index=demo.time_index, annotations=demo.annotations
    )


def generate_demo(
    cfg: SimConfig, demo_index: int, scene: Optional[SharedScene] = None
) -> Tuple[Demonstration, SegmentTrack]:
    """
    Одна демонстрация и её истинная разметка.

    Детерминирована по (seed, demo_index).
    """
    scene = scene if scene is not None else shared_scene(cfg)
    rng = np.random.default_rng([cfg.seed, 1, demo_index])
    dt = 1.0 / cfg.sample_rate_hz
    durations = segment_durations(cfg, rng)
    kin, labels = _clean_kinematics(durations, dt)
    if cfg.kinematic_noise_std > 0:
        kin = kin + rng.normal(scale=cfg.kinematic_noise_std, size=kin.shape)
    visual = _visual_features(cfg, scene, labels, rng)
    track = SegmentTrack.from_labels(labels, start_index=0, segment_count=len(SEGMENT_SCRIPT))
    demo = Demonstration.from_arrays(f"demo_{demo_index:02d}", cfg.sample_rate_hz, kin, visual, annotations=track)

    if cfg.spurious_jitter_rate > 0:
        count = int(rng.poisson(cfg.spurious_jitter_rate))
        frames = _jitter_frames(track, demo.num_frames, count, margin=10, rng=rng)
        if frames:
            demo = inject_spurious_jitter(demo, frames, cfg.spurious_jitter_magnitude, rng)
            logger.debug(f"{demo.id}: ложные рывки в кадрах {frames}")
    return demo, track


def check_mode_separation(cfg: SimConfig, scene: SharedScene) -> float:
    """
    Минимальное попарное расстояние между средними мод.

    Raises:
        ValidationFailed: если оно меньше заданного разделения
    """
    distance = float(pdist(scene.mode_means).min())
    radius = cfg.visual_noise_radius if cfg.visual_noise_radius > 0 else 1.0
    if distance < cfg.visual_separation * radius * (1 - 1e-9):
        raise ValidationFailed(f"Визуальные моды разделены хуже заданного: {distance:.3f}")
    return distance


def generate_dataset(cfg: SimConfig) -> Tuple[List[Demonstration], DatasetManifest]:
    """
    Набор из num_demos независимых демонстраций и манифест с разбиением train/test.

    Первые train демонстраций идут в обучение, остальные в тест.
    """
    scene = shared_scene(cfg)
    check_mode_separation(cfg, scene)
    demos = [generate_demo(cfg, index, scene)[0] for index in range(cfg.num_demos)]
    train_count, _ = cfg.resolved_split()
    ids = [demo.id for demo in demos]
    manifest = DatasetManifest(
        demos=[
            DemoEntry(id=demo.id, file=f"{demo.id}.csv", annotations=f"{demo.id}_labels.csv", num_frames=demo.num_frames)
            for demo in demos
        ],
        visual_dim=cfg.raw_dim,
        sample_rate_hz=cfg.sample_rate_hz,
        split=DatasetSplit(train=ids[:train_count], test=ids[train_count:]),
        generator_seed=cfg.seed,
        generator=cfg.model_dump(),
        directives="directives.json",
        segment_count=len(SEGMENT_SCRIPT),
    )
    logger.info(f"Сгенерировано демонстраций: {len(demos)} (train {train_count}, test {len(demos) - train_count})")
    return demos, manifest


def default_directives() -> Dict[str, AssistanceDirective]:
    """
    Директивы для сценария: ориентация входящего сегмента и команда схвата
    (close при входе в захват, open при входе в отпускание, иначе hold).
    """
    commands = {"grasp": "close", "release": "open", "move": "hold"}
    directives = {}
    for label, spec in zip(TRANSITION_LABELS, SEGMENT_SCRIPT[1:]):
        directives[label] = AssistanceDirective(
            transition=label,
            target_orientation=[float(v) for v in _wxyz(_rotation(spec.orientation_deg))[0]],
            gripper_command=commands[spec.kind],
        )
    return directives
