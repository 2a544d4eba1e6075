"""Domain types, category taxonomy, submission validation, and eval-set filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_TAU = 2.0 * math.pi


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(yaw, _TAU)
    if r <= -math.pi:
        r += _TAU
    return r


# ---------------------------------------------------------------------------
# Category taxonomy
# ---------------------------------------------------------------------------

class TaxonomyError(KeyError):
    """Raised for category names outside the supported taxonomy."""


@dataclass(frozen=True)
class Category:
    """One taxonomy row: general name plus its detection/tracking projections.

    ``detection_name`` / ``tracking_name`` are None for classes that do not
    take part in the respective task.
    """

    general_name: str
    detection_name: str | None
    tracking_name: str | None


# General class -> (detection class, tracking class). Tracking drops the
# static classes (barrier, construction_vehicle, traffic_cone).
_CLASS_ROWS: tuple[tuple[str, str | None, str | None], ...] = (
    ("animal", None, None),
    ("debris", None, None),
    ("pushable_pullable", None, None),
    ("bicycle_rack", None, None),
    ("ambulance", None, None),
    ("police", None, None),
    ("barrier", "barrier", None),
    ("bicycle", "bicycle", "bicycle"),
    ("bus.bendy", "bus", "bus"),
    ("bus.rigid", "bus", "bus"),
    ("car", "car", "car"),
    ("construction", "construction_vehicle", None),
    ("motorcycle", "motorcycle", "motorcycle"),
    ("adult", "pedestrian", "pedestrian"),
    ("child", "pedestrian", "pedestrian"),
    ("construction_worker", "pedestrian", "pedestrian"),
    ("police_officer", "pedestrian", "pedestrian"),
    ("personal_mobility", None, None),
    ("stroller", None, None),
    ("wheelchair", None, None),
    ("trafficcone", "traffic_cone", None),
    ("trailer", "trailer", "trailer"),
    ("truck", "truck", "truck"),
)

CLASS_TABLE: dict[str, Category] = {
    general: Category(general, det, trk) for general, det, trk in _CLASS_ROWS
}

GENERAL_CATEGORIES: tuple[str, ...] = tuple(CLASS_TABLE)

DETECTION_CATEGORIES: tuple[str, ...] = (
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
)

TRACKING_CATEGORIES: tuple[str, ...] = (
    "bicycle",
    "bus",
    "car",
    "motorcycle",
    "pedestrian",
    "trailer",
    "truck",
)


def map_category(general_name: str) -> Category:
    """Map a general class name to its detection/tracking categories.

    Dotted namespace prefixes are stripped until a taxonomy row matches, so
    both ``adult`` and ``human.pedestrian.adult`` resolve to the same row.
    """
    name = general_name
    while True:
        row = CLASS_TABLE.get(name)
        if row is not None:
            return row
        if "." not in name:
            raise TaxonomyError(f"unknown category name: {general_name!r}")
        name = name.split(".", 1)[1]


# ---------------------------------------------------------------------------
# Box records
# ---------------------------------------------------------------------------

Vec3 = tuple[float, float, float]
Vec2 = tuple[float, float]


@dataclass(frozen=True)
class BoxRecord:
    """A 3D cuboid in the global frame.

    ``size`` is (width, length, height); ``yaw`` rotates the box heading
    (+x, the length axis) about +z and is normalized into (-pi, pi] at
    construction.
    """

    sample_id: str
    translation: Vec3
    size: Vec3
    yaw: float
    velocity: Vec2 | None = None
    category: str = ""
    attribute: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if math.isfinite(self.yaw):
            object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))


@dataclass(frozen=True)
class GroundTruthBox:
    """Annotated box with a scene-stable instance identity."""

    base: BoxRecord
    instance_id: str
    num_sensor_points: int | None = None
    is_ignore_region: bool = False


@dataclass(frozen=True)
class DetectionBox:
    base: BoxRecord
    score: float


@dataclass(frozen=True)
class TrackBox:
    base: BoxRecord
    score: float
    tracking_id: str


@dataclass(frozen=True)
class Scene:
    """An ordered sequence of keyframe samples.

    ``samples`` holds (sample_id, timestamp in microseconds) pairs; nominal
    keyframe spacing is 1/keyframe_rate with up to 25% jitter tolerated.
    """

    scene_id: str
    samples: tuple[tuple[str, int], ...]
    keyframe_rate: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "samples", tuple((str(s), int(t)) for s, t in self.samples)
        )
        if self.keyframe_rate <= 0:
            raise ValueError(f"scene {self.scene_id}: keyframe_rate must be positive")
        nominal_us = 1e6 / self.keyframe_rate
        times = [t for _, t in self.samples]
        for i in range(1, len(times)):
            dt = times[i] - times[i - 1]
            if dt <= 0:
                raise ValueError(
                    f"scene {self.scene_id}: timestamps not strictly increasing at index {i}"
                )
            if abs(dt - nominal_us) > 0.25 * nominal_us:
                raise ValueError(
                    f"scene {self.scene_id}: keyframe spacing {dt}us at index {i} "
                    f"outside 25% of nominal {nominal_us:.0f}us"
                )

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.samples)


_VEHICLE_RANGE_M = 50.0
_DEFAULT_RANGE_M = 40.0


def default_max_ranges() -> dict[str, float]:
    """Per-category evaluation range caps in meters (convention, not mandated)."""
    ranges = {c: _DEFAULT_RANGE_M for c in DETECTION_CATEGORIES}
    for c in ("car", "truck", "bus", "trailer", "construction_vehicle"):
        ranges[c] = _VEHICLE_RANGE_M
    return ranges


@dataclass(frozen=True)
class EvalConfig:
    """Knobs shared by the detection and tracking evaluators."""

    distance_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_distance: float = 2.0
    min_recall: float = 0.1
    min_precision: float = 0.1
    per_category_max_range: dict[str, float] = field(default_factory=default_max_ranges)
    require_sensor_points: bool = True
    recall_samples: int = 101
    tracking_recall_points: int = 40

    def __post_init__(self) -> None:
        if self.tp_distance not in self.distance_thresholds:
            raise ValueError(
                f"tp_distance {self.tp_distance} not in distance_thresholds "
                f"{self.distance_thresholds}"
            )
        if not 0 < self.min_recall < 1:
            raise ValueError(f"min_recall must be in (0, 1), got {self.min_recall}")
        if not 0 < self.min_precision < 1:
            raise ValueError(f"min_precision must be in (0, 1), got {self.min_precision}")
        if self.recall_samples < 2:
            raise ValueError("recall_samples must be at least 2")
        if self.tracking_recall_points < 1:
            raise ValueError("tracking_recall_points must be at least 1")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

class ValidationError(ValueError):
    """One or more submission boxes violate their invariants."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        preview = "; ".join(self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} validation error(s): {preview}{more}")


AnyBox = GroundTruthBox | DetectionBox | TrackBox


def _check_base(box: BoxRecord, idx: int, errors: list[str]) -> None:
    if not all(math.isfinite(v) for v in box.translation):
        errors.append(f"box {idx}: non-finite translation {box.translation}")
    if not all(math.isfinite(v) and v > 0 for v in box.size):
        errors.append(f"box {idx}: size components must be positive and finite, got {box.size}")
    if not math.isfinite(box.yaw):
        errors.append(f"box {idx}: non-finite yaw")
    if box.velocity is not None and not all(math.isfinite(v) for v in box.velocity):
        errors.append(f"box {idx}: non-finite velocity {box.velocity}")


def validate_submission(
    boxes: list[AnyBox], scenes: list[Scene]
) -> dict[str, list[AnyBox]]:
    """Validate a flat box list against the scene set and group it by sample.

    Accepts ground-truth, detection, or tracking boxes (mixable only in the
    sense that each box is checked against the rules of its own type). Every
    violation is collected and reported with the offending box index; a clean
    submission is returned as an insertion-ordered sample_id -> boxes map.
    """
    known_samples: set[str] = set()
    for scene in scenes:
        known_samples.update(scene.sample_ids)

    errors: list[str] = []
    grouped: dict[str, list[AnyBox]] = {}
    seen_track_ids: set[tuple[str, str]] = set()
    seen_instance_ids: set[tuple[str, str]] = set()

    for idx, box in enumerate(boxes):
        base = box.base
        if base.sample_id not in known_samples:
            errors.append(f"box {idx}: unknown sample_id {base.sample_id!r}")
        _check_base(base, idx, errors)

        if isinstance(box, TrackBox):
            if base.category not in TRACKING_CATEGORIES:
                errors.append(f"box {idx}: {base.category!r} is not a tracking category")
            key = (base.sample_id, box.tracking_id)
            if key in seen_track_ids:
                errors.append(
                    f"box {idx}: duplicate tracking_id {box.tracking_id!r} "
                    f"in sample {base.sample_id!r}"
                )
            seen_track_ids.add(key)
        elif isinstance(box, DetectionBox):
            if base.category not in DETECTION_CATEGORIES:
                errors.append(f"box {idx}: {base.category!r} is not a detection category")
        elif isinstance(box, GroundTruthBox):
            if not box.is_ignore_region and base.category not in DETECTION_CATEGORIES:
                errors.append(f"box {idx}: {base.category!r} is not a detection category")
            if box.num_sensor_points is not None and box.num_sensor_points < 0:
                errors.append(f"box {idx}: negative num_sensor_points")
            key = (base.sample_id, box.instance_id)
            if key in seen_instance_ids:
                errors.append(
                    f"box {idx}: duplicate instance_id {box.instance_id!r} "
                    f"in sample {base.sample_id!r}"
                )
            seen_instance_ids.add(key)

        if isinstance(box, (DetectionBox, TrackBox)):
            if not math.isfinite(box.score) or not 0.0 <= box.score <= 1.0:
                errors.append(f"box {idx}: score {box.score} outside [0, 1]")

        grouped.setdefault(base.sample_id, []).append(box)

    if errors:
        raise ValidationError(errors)
    return grouped


# ---------------------------------------------------------------------------
# Raster mask (semantic map prior)
# ---------------------------------------------------------------------------

@dataclass
class RasterMask:
    """Binary ground-plane raster with a world-frame origin.

    ``grid[row, col]`` covers the world cell at
    x in [origin_x + col/res, origin_x + (col+1)/res) and the analogous y
    band indexed by row. Points outside the raster are treated as infinitely
    far from the positive region.
    """

    origin: Vec2
    resolution: float  # pixels per meter
    grid: np.ndarray

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("mask resolution must be positive")
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise ValueError("mask grid must be 2-dimensional")
        self._dist_px: np.ndarray | None = None

    def distance_to_positive(self, x: float, y: float) -> float:
        """Meters from (x, y) to the nearest positive cell; inf when off-grid."""
        col = math.floor((x - self.origin[0]) * self.resolution)
        row = math.floor((y - self.origin[1]) * self.resolution)
        if not (0 <= row < self.grid.shape[0] and 0 <= col < self.grid.shape[1]):
            return math.inf
        if self._dist_px is None:
            if not self.grid.any():
                self._dist_px = np.full(self.grid.shape, np.inf)
            else:
                from scipy.ndimage import distance_transform_edt

                self._dist_px = distance_transform_edt(~self.grid)
        return float(self._dist_px[row, col]) / self.resolution


# ---------------------------------------------------------------------------
# Evaluation-set filtering
# ---------------------------------------------------------------------------

def _center_in_footprint(px: float, py: float, box: BoxRecord) -> bool:
    # Box frame: +x along the heading (length axis), +y lateral (width axis).
    dx = px - box.translation[0]
    dy = py - box.translation[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local_x = c * dx + s * dy
    local_y = -s * dx + c * dy
    w, l, _ = box.size
    return abs(local_x) <= l / 2.0 and abs(local_y) <= w / 2.0


def _range_2d(box: BoxRecord, ego: Vec2) -> float:
    return math.hypot(box.translation[0] - ego[0], box.translation[1] - ego[1])


def filter_eval_boxes(
    gt: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[AnyBox]],
    config: EvalConfig,
    map_mask: RasterMask | None = None,
    *,
    ego_positions: dict[str, Vec2] | None = None,
    map_mask_max_distance: float = 0.0,
) -> tuple[dict[str, list[GroundTruthBox]], dict[str, list[AnyBox]]]:
    """Apply the evaluation-set filtering rules to validated boxes.

    Drops ground truth without sensor coverage (``num_sensor_points == 0``
    when required and present), everything beyond the per-category range cap
    measured from the sample's ego position (origin when unknown), and, when
    a mask is given, boxes farther than ``map_mask_max_distance`` meters from
    its positive region. Predictions centered inside an ignore-region box
    footprint are dropped without penalty, and ignore-region boxes themselves
    never reach scoring. Filtering is total: it never raises.
    """
    egos = ego_positions or {}
    ranges = config.per_category_max_range

    def ego_of(sample_id: str) -> Vec2:
        return egos.get(sample_id, (0.0, 0.0))

    def in_range(box: BoxRecord, sample_id: str) -> bool:
        return _range_2d(box, ego_of(sample_id)) <= ranges.get(box.category, math.inf)

    def near_mask(box: BoxRecord) -> bool:
        if map_mask is None:
            return True
        d = map_mask.distance_to_positive(box.translation[0], box.translation[1])
        return d <= map_mask_max_distance

    ignore_regions: dict[str, list[GroundTruthBox]] = {}
    gt_out: dict[str, list[GroundTruthBox]] = {}
    for sample_id, boxes in gt.items():
        kept: list[GroundTruthBox] = []
        zones: list[GroundTruthBox] = []
        for g in boxes:
            if g.is_ignore_region:
                zones.append(g)
                continue
            if (
                config.require_sensor_points
                and g.num_sensor_points is not None
                and g.num_sensor_points == 0
            ):
                continue
            if not in_range(g.base, sample_id):
                continue
            if not near_mask(g.base):
                continue
            kept.append(g)
        gt_out[sample_id] = kept
        if zones:
            ignore_regions[sample_id] = zones

    preds_out: dict[str, list[AnyBox]] = {}
    for sample_id, boxes in preds.items():
        zones = ignore_regions.get(sample_id, [])
        kept_p: list[AnyBox] = []
        for p in boxes:
            if not in_range(p.base, sample_id):
                continue
            if not near_mask(p.base):
                continue
            cx, cy = p.base.translation[0], p.base.translation[1]
            if any(_center_in_footprint(cx, cy, z.base) for z in zones):
                continue
            kept_p.append(p)
        preds_out[sample_id] = kept_p

    return gt_out, preds_out
