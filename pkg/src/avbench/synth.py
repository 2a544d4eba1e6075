"""Deterministic synthetic scenes and submission perturbation models.

Every random draw comes from a counter-based Philox generator keyed by the
config seed plus a hash of a per-(entity, channel) label, so adding draws to
one channel never reshuffles any other and output is bit-stable across
platforms and runs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BoxRecord,
    DetectionBox,
    GroundTruthBox,
    Scene,
    TRACKING_CATEGORIES,
    TrackBox,
)
from .geometry import RigidTransform, Sweep, quat_from_yaw

# Nominal (width, length, height) per category, meters.
CATEGORY_SIZES: dict[str, tuple[float, float, float]] = {
    "car": (1.95, 4.62, 1.73),
    "truck": (2.51, 6.93, 2.84),
    "bus": (2.94, 11.0, 3.47),
    "trailer": (2.90, 12.29, 3.87),
    "construction_vehicle": (2.85, 6.37, 3.19),
    "pedestrian": (0.67, 0.73, 1.77),
    "motorcycle": (0.77, 2.11, 1.47),
    "bicycle": (0.60, 1.70, 1.28),
    "traffic_cone": (0.41, 0.41, 1.07),
    "barrier": (2.53, 0.50, 0.98),
}

CATEGORY_ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "car": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "truck": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "bus": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "trailer": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "construction_vehicle": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "pedestrian": ("pedestrian.moving", "pedestrian.standing"),
    "motorcycle": ("cycle.with_rider", "cycle.without_rider"),
    "bicycle": ("cycle.with_rider", "cycle.without_rider"),
    "traffic_cone": (),
    "barrier": (),
}

STATIC_CATEGORIES = frozenset({"traffic_cone", "barrier"})

INVERSE_NOISE = "inverse_noise"
UNIFORM = "uniform"


def _default_mix() -> dict[str, float]:
    return {"car": 0.5, "pedestrian": 0.3, "bicycle": 0.2}


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 2
    n_frames_per_scene: int = 10
    keyframe_rate: float = 2.0
    n_objects: int = 8
    category_mix: dict[str, float] = field(default_factory=_default_mix)
    speed_range: tuple[float, float] = (0.0, 8.0)
    world_extent: float = 80.0  # full side length of the square world
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_scenes", "n_frames_per_scene", "n_objects"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.keyframe_rate <= 0 or self.world_extent <= 0:
            raise ValueError("keyframe_rate and world_extent must be positive")
        if not self.category_mix:
            raise ValueError("category_mix must not be empty")
        for cat in self.category_mix:
            if cat not in CATEGORY_SIZES:
                raise ValueError(f"unknown category in mix: {cat!r}")
        total = math.fsum(self.category_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"category_mix weights sum to {total}, expected 1")
        if self.speed_range[0] < 0 or self.speed_range[1] < self.speed_range[0]:
            raise ValueError("speed_range must be 0 <= lo <= hi")


@dataclass(frozen=True)
class NoiseModel:
    sigma_translation: float = 0.0
    sigma_scale: float = 0.0
    sigma_yaw: float = 0.0
    sigma_velocity: float = 0.0
    drop_prob: float = 0.0
    clutter_rate: float = 0.0  # expected false positives per frame
    attribute_flip_prob: float = 0.0
    id_switch_prob: float = 0.0  # per track-frame
    score_model: str = INVERSE_NOISE

    def __post_init__(self) -> None:
        for name in ("sigma_translation", "sigma_scale", "sigma_yaw", "sigma_velocity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("drop_prob", "attribute_flip_prob", "id_switch_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be non-negative")
        if self.score_model not in (INVERSE_NOISE, UNIFORM):
            raise ValueError(f"unknown score_model {self.score_model!r}")


def stream(seed: int, label: str) -> np.random.Generator:
    """Independent deterministic stream for one (seed, label) pair."""
    digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthData:
    scenes: list[Scene]
    gt_detection: dict[str, list[GroundTruthBox]]
    gt_tracking: dict[str, list[GroundTruthBox]]
    sweeps: dict[str, list[Sweep]]
    ego_poses: dict[str, RigidTransform]


def _scene_id(i: int) -> str:
    return f"scene-{i:04d}"


def _sample_id(scene: str, k: int) -> str:
    return f"{scene}-frame-{k:03d}"


def generate_scenes(config: SynthConfig) -> SynthData:
    """Sample constant-velocity agents over evenly spaced keyframes.

    Also emits a 20 Hz sensor-pose sweep stream per scene (small random
    clouds on a smoothly turning ego trajectory) for transform tests, plus
    the ego pose at every keyframe.
    """
    step_us = round(1e6 / config.keyframe_rate)
    categories = sorted(config.category_mix)
    weights = np.array([config.category_mix[c] for c in categories])
    weights = weights / weights.sum()

    scenes: list[Scene] = []
    gt_detection: dict[str, list[GroundTruthBox]] = {}
    gt_tracking: dict[str, list[GroundTruthBox]] = {}
    sweeps: dict[str, list[Sweep]] = {}
    ego_poses: dict[str, RigidTransform] = {}

    for si in range(config.n_scenes):
        scene_id = _scene_id(si)
        t0 = 10_000_000_000 + si * 1_000_000_000
        samples = tuple(
            (_sample_id(scene_id, k), t0 + k * step_us)
            for k in range(config.n_frames_per_scene)
        )
        scenes.append(Scene(scene_id, samples, config.keyframe_rate))
        for sid, _ in samples:
            gt_detection[sid] = []
            gt_tracking[sid] = []

        half = config.world_extent / 2.0
        for oi in range(config.n_objects):
            rng = stream(config.seed, f"{scene_id}/obj-{oi:03d}/init")
            category = categories[rng.choice(len(categories), p=weights)]
            pos0 = rng.uniform(-half, half, 2)
            heading = rng.uniform(-math.pi, math.pi)
            speed = (
                0.0
                if category in STATIC_CATEGORIES
                else rng.uniform(*config.speed_range)
            )
            nominal = CATEGORY_SIZES[category]
            size = tuple(
                float(d * math.exp(e)) for d, e in zip(nominal, rng.normal(0, 0.05, 3))
            )
            attrs = CATEGORY_ATTRIBUTES[category]
            attribute = attrs[rng.integers(len(attrs))] if attrs else None
            velocity = (speed * math.cos(heading), speed * math.sin(heading))
            instance_id = f"{scene_id}-obj-{oi:03d}"

            for k, (sid, _) in enumerate(samples):
                t = k / config.keyframe_rate
                center = (
                    float(pos0[0] + velocity[0] * t),
                    float(pos0[1] + velocity[1] * t),
                    size[2] / 2.0,
                )
                base = BoxRecord(
                    sample_id=sid,
                    translation=center,
                    size=size,
                    yaw=heading,
                    velocity=velocity,
                    category=category,
                    attribute=attribute,
                )
                box = GroundTruthBox(base, instance_id)
                gt_detection[sid].append(box)
                if category in TRACKING_CATEGORIES:
                    gt_tracking[sid].append(box)

        # 20 Hz ego/sensor trajectory: straight drive with a gentle turn
        ego_rng = stream(config.seed, f"{scene_id}/ego")
        ego_speed = ego_rng.uniform(2.0, 10.0)
        ego_heading0 = ego_rng.uniform(-math.pi, math.pi)
        turn_rate = ego_rng.uniform(-0.1, 0.1)
        cloud_rng = stream(config.seed, f"{scene_id}/sweep-points")

        def ego_pose_at(dt_s: float) -> RigidTransform:
            yaw = ego_heading0 + turn_rate * dt_s
            x = ego_speed * math.cos(ego_heading0) * dt_s
            y = ego_speed * math.sin(ego_heading0) * dt_s
            return RigidTransform(quat_from_yaw(yaw), (x, y, 0.0))

        duration_us = (config.n_frames_per_scene - 1) * step_us
        sweep_list: list[Sweep] = []
        for ts in range(t0 - 500_000, t0 + duration_us + 1, 50_000):
            pts = np.empty((16, 4))
            pts[:, :3] = cloud_rng.uniform(-20.0, 20.0, (16, 3))
            pts[:, 3] = cloud_rng.uniform(0.0, 1.0, 16)
            sweep_list.append(Sweep(pts, ts, ego_pose_at((ts - t0) / 1e6)))
        sweeps[scene_id] = sweep_list
        for sid, ts in samples:
            ego_poses[sid] = ego_pose_at((ts - t0) / 1e6)

    return SynthData(scenes, gt_detection, gt_tracking, sweeps, ego_poses)


def _perturb_base(
    base: BoxRecord, noise: NoiseModel, seed: int, label: str
) -> tuple[BoxRecord, float]:
    """Apply geometry noise channels; returns the box and the realized 2D
    translation offset norm (feeds the inverse_noise score)."""
    dx, dy = stream(seed, f"{label}/translation").normal(0.0, noise.sigma_translation, 2)
    size = tuple(
        float(d * math.exp(e))
        for d, e in zip(base.size, stream(seed, f"{label}/scale").normal(0.0, noise.sigma_scale, 3))
    )
    yaw = base.yaw + float(stream(seed, f"{label}/yaw").normal(0.0, noise.sigma_yaw))
    velocity = base.velocity
    if velocity is not None:
        dvx, dvy = stream(seed, f"{label}/velocity").normal(0.0, noise.sigma_velocity, 2)
        velocity = (velocity[0] + float(dvx), velocity[1] + float(dvy))
    attribute = base.attribute
    attrs = CATEGORY_ATTRIBUTES.get(base.category, ())
    if len(attrs) > 1 and noise.attribute_flip_prob > 0:
        flip_rng = stream(seed, f"{label}/attribute")
        if flip_rng.random() < noise.attribute_flip_prob:
            others = [a for a in attrs if a != attribute]
            attribute = others[flip_rng.integers(len(others))]
    out = BoxRecord(
        sample_id=base.sample_id,
        translation=(
            base.translation[0] + float(dx),
            base.translation[1] + float(dy),
            base.translation[2],
        ),
        size=size,
        yaw=yaw,
        velocity=velocity,
        category=base.category,
        attribute=attribute,
    )
    return out, math.hypot(float(dx), float(dy))


def _score(noise: NoiseModel, offset: float, seed: int, label: str) -> float:
    if noise.score_model == UNIFORM:
        return float(stream(seed, f"{label}/score").random())
    return 1.0 / (1.0 + offset)


def _world_bounds(gt: dict[str, list[GroundTruthBox]]) -> tuple[float, float, float, float]:
    xs = [b.base.translation[0] for boxes in gt.values() for b in boxes]
    ys = [b.base.translation[1] for boxes in gt.values() for b in boxes]
    if not xs:
        return -10.0, 10.0, -10.0, 10.0
    return min(xs) - 10.0, max(xs) + 10.0, min(ys) - 10.0, max(ys) + 10.0


def _clutter_boxes(
    sample_id: str,
    categories: list[str],
    bounds: tuple[float, float, float, float],
    noise: NoiseModel,
    seed: int,
) -> list[tuple[BoxRecord, float]]:
    """Uniform false-positive boxes with their scores for one sample."""
    rng = stream(seed, f"clutter/{sample_id}")
    count = int(rng.poisson(noise.clutter_rate))
    out = []
    x0, x1, y0, y1 = bounds
    for _ in range(count):
        category = categories[rng.integers(len(categories))]
        size = CATEGORY_SIZES[category]
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        yaw = rng.uniform(-math.pi, math.pi)
        attrs = CATEGORY_ATTRIBUTES[category]
        attribute = attrs[rng.integers(len(attrs))] if attrs else None
        base = BoxRecord(
            sample_id=sample_id,
            translation=(float(x), float(y), size[2] / 2.0),
            size=size,
            yaw=float(yaw),
            velocity=(0.0, 0.0),
            category=category,
            attribute=attribute,
        )
        if noise.score_model == UNIFORM:
            score = float(rng.random())
        else:
            score = float(rng.uniform(0.0, 0.5))  # ranks below real detections
        out.append((base, score))
    return out


def perturb_detections(
    gt: dict[str, list[GroundTruthBox]], noise: NoiseModel, seed: int
) -> dict[str, list[DetectionBox]]:
    """Derive a noisy detection submission from ground truth.

    All-zero noise returns the ground truth verbatim with score 1. Scores
    under ``inverse_noise`` are 1 / (1 + translation offset); under
    ``uniform`` they are independent of the noise realization.
    """
    categories = sorted({b.base.category for boxes in gt.values() for b in boxes})
    bounds = _world_bounds(gt)
    out: dict[str, list[DetectionBox]] = {}
    for sample_id in sorted(gt):
        boxes: list[DetectionBox] = []
        for g in gt[sample_id]:
            label = f"det/{sample_id}/{g.instance_id}"
            if noise.drop_prob > 0 and stream(seed, f"{label}/drop").random() < noise.drop_prob:
                continue
            base, offset = _perturb_base(g.base, noise, seed, label)
            boxes.append(DetectionBox(base, _score(noise, offset, seed, label)))
        if noise.clutter_rate > 0 and categories:
            for base, score in _clutter_boxes(sample_id, categories, bounds, noise, seed):
                boxes.append(DetectionBox(base, score))
        out[sample_id] = boxes
    return out


def perturb_tracks(
    gt: dict[str, list[GroundTruthBox]], noise: NoiseModel, seed: int
) -> dict[str, list[TrackBox]]:
    """Derive a noisy tracking submission from tracking ground truth.

    Emitted ids start as the GT instance id; with ``id_switch_prob`` per
    track-frame the id is permuted from that frame onward. Frame order
    within a track follows sorted sample ids (generated ids sort
    chronologically).
    """
    categories = sorted(
        {
            b.base.category
            for boxes in gt.values()
            for b in boxes
            if b.base.category in TRACKING_CATEGORIES
        }
    )
    bounds = _world_bounds(gt)

    switch_counts: dict[str, int] = {}
    out: dict[str, list[TrackBox]] = {}
    for sample_id in sorted(gt):
        boxes: list[TrackBox] = []
        for g in gt[sample_id]:
            if g.base.category not in TRACKING_CATEGORIES:
                continue
            label = f"trk/{sample_id}/{g.instance_id}"
            if noise.id_switch_prob > 0:
                if stream(seed, f"{label}/switch").random() < noise.id_switch_prob:
                    switch_counts[g.instance_id] = switch_counts.get(g.instance_id, 0) + 1
            n_switches = switch_counts.get(g.instance_id, 0)
            track_id = (
                g.instance_id if n_switches == 0 else f"{g.instance_id}#s{n_switches}"
            )
            if noise.drop_prob > 0 and stream(seed, f"{label}/drop").random() < noise.drop_prob:
                continue
            base, offset = _perturb_base(g.base, noise, seed, label)
            boxes.append(TrackBox(base, _score(noise, offset, seed, label), track_id))
        if noise.clutter_rate > 0 and categories:
            for ci, (base, score) in enumerate(
                _clutter_boxes(sample_id, categories, bounds, noise, seed)
            ):
                boxes.append(TrackBox(base, score, f"clutter-{sample_id}-{ci}"))
        out[sample_id] = boxes
    return out
