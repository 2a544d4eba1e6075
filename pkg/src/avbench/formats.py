"""Interchange file formats: ground truth, submissions, masks, configs, and
deterministic metric result files.

All files are UTF-8 JSON. Schema violations raise SchemaError naming the
offending path (e.g. results["sample-12"][3].size). Result files use a fixed
field order and documented rounding (4 decimals for fractions, 2 for values
in native units) so reruns diff cleanly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .core import (
    BoxRecord,
    DetectionBox,
    EvalConfig,
    GroundTruthBox,
    RasterMask,
    Scene,
    TrackBox,
    Vec2,
    map_category,
    TaxonomyError,
)
from .detection import TP_METRICS, DetectionMetrics, MatcherStudyRow
from .geometry import quat_from_yaw, yaw_from_quat
from .synth import NoiseModel, SynthConfig
from .tracking import TrackingMetrics

_QUAT_NORM_TOL = 1e-3

# Detection category -> a general-taxonomy name that maps back to it.
_GENERAL_NAME_FOR = {
    "bus": "bus.rigid",
    "construction_vehicle": "construction",
    "pedestrian": "adult",
    "traffic_cone": "trafficcone",
}

_SUBMISSION_META_KEYS = ("use_camera", "use_lidar", "use_radar", "use_map", "use_external")

DEFAULT_META = {
    "use_camera": False,
    "use_lidar": True,
    "use_radar": False,
    "use_map": False,
    "use_external": False,
}


class SchemaError(ValueError):
    """A file does not conform to its schema; ``path`` locates the problem."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _read_json(path: str):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(path, f"not valid JSON: {e}") from e


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise SchemaError(path, message)


def _get(obj: dict, key: str, path: str, required: bool = True, default=None):
    if key not in obj:
        _expect(not required, f"{path}.{key}", "missing required field")
        return default
    return obj[key]


def _floats(value, n: int, path: str) -> tuple[float, ...]:
    _expect(
        isinstance(value, (list, tuple)) and len(value) == n,
        path,
        f"expected a list of {n} numbers",
    )
    out = []
    for i, v in enumerate(value):
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}[{i}]", "expected a number")
        out.append(float(v))
    return tuple(out)


def _quat_to_yaw(value, path: str) -> float:
    q = _floats(value, 4, path)
    norm = math.sqrt(sum(v * v for v in q))
    _expect(
        math.isfinite(norm) and abs(norm - 1.0) <= _QUAT_NORM_TOL,
        path,
        f"quaternion norm {norm:.6g} not within {_QUAT_NORM_TOL} of 1",
    )
    unit = tuple(v / norm for v in q)
    return yaw_from_quat(unit)


def _number(value, path: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), path, "expected a number")
    return float(value)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthData:
    """Parsed ground truth: scenes plus per-task box maps."""

    scenes: list[Scene]
    detection: dict[str, list[GroundTruthBox]]
    tracking: dict[str, list[GroundTruthBox]]
    ego_positions: dict[str, Vec2]


def load_ground_truth(path: str) -> GroundTruthData:
    """Parse a ground-truth file.

    Annotation categories use general taxonomy names; they are projected to
    detection/tracking categories on load. Boxes whose class takes part in
    neither task are dropped, except ignore-region entries (explicit flag or
    the bike-rack class), which are kept as scoring-exempt zones for both
    tasks.
    """
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")

    scenes: list[Scene] = []
    ego_positions: dict[str, Vec2] = {}
    raw_scenes = _get(data, "scenes", "$")
    _expect(isinstance(raw_scenes, list) and raw_scenes, "$.scenes", "expected a non-empty list")
    for i, rs in enumerate(raw_scenes):
        spath = f"$.scenes[{i}]"
        _expect(isinstance(rs, dict), spath, "expected an object")
        scene_id = _get(rs, "scene_id", spath)
        rate = _number(_get(rs, "keyframe_rate", spath, required=False, default=2.0), f"{spath}.keyframe_rate")
        raw_samples = _get(rs, "samples", spath)
        _expect(isinstance(raw_samples, list) and raw_samples, f"{spath}.samples", "expected a non-empty list")
        samples = []
        for j, s in enumerate(raw_samples):
            ppath = f"{spath}.samples[{j}]"
            _expect(isinstance(s, dict), ppath, "expected an object")
            sid = _get(s, "sample_id", ppath)
            ts = _get(s, "timestamp_us", ppath)
            _expect(isinstance(ts, int) and not isinstance(ts, bool), f"{ppath}.timestamp_us", "expected an integer")
            samples.append((sid, ts))
            ego = _get(s, "ego_translation", ppath, required=False)
            if ego is not None:
                ex, ey, _ = _floats(ego, 3, f"{ppath}.ego_translation")
                ego_positions[sid] = (ex, ey)
        try:
            scenes.append(Scene(scene_id, tuple(samples), rate))
        except ValueError as e:
            raise SchemaError(spath, str(e)) from e

    detection: dict[str, list[GroundTruthBox]] = {}
    tracking: dict[str, list[GroundTruthBox]] = {}
    for scene in scenes:
        for sid in scene.sample_ids:
            detection[sid] = []
            tracking[sid] = []

    raw_annotations = _get(data, "annotations", "$")
    _expect(isinstance(raw_annotations, dict), "$.annotations", "expected an object")
    for sid, anns in raw_annotations.items():
        apath = f'$.annotations["{sid}"]'
        _expect(sid in detection, apath, "sample_id not present in any scene")
        _expect(isinstance(anns, list), apath, "expected a list")
        for k, ann in enumerate(anns):
            bpath = f"{apath}[{k}]"
            _expect(isinstance(ann, dict), bpath, "expected an object")
            general = _get(ann, "category", bpath)
            try:
                row = map_category(general)
            except TaxonomyError as e:
                raise SchemaError(f"{bpath}.category", str(e)) from e
            is_ignore = bool(_get(ann, "is_ignore_region", bpath, required=False, default=False))
            if row.general_name == "bicycle_rack":
                is_ignore = True
            if row.detection_name is None and not is_ignore:
                continue  # class outside both tasks

            translation = _floats(_get(ann, "translation", bpath), 3, f"{bpath}.translation")
            size = _floats(_get(ann, "size", bpath), 3, f"{bpath}.size")
            yaw = _quat_to_yaw(_get(ann, "rotation", bpath), f"{bpath}.rotation")
            raw_vel = _get(ann, "velocity", bpath, required=False)
            velocity = None if raw_vel is None else _floats(raw_vel, 2, f"{bpath}.velocity")
            attribute = _get(ann, "attribute", bpath, required=False) or None
            instance = _get(ann, "instance_token", bpath)

            lidar = _get(ann, "num_lidar_pts", bpath, required=False)
            radar = _get(ann, "num_radar_pts", bpath, required=False)
            num_points = None
            if lidar is not None or radar is not None:
                num_points = int(lidar or 0) + int(radar or 0)

            def make(category: str) -> GroundTruthBox:
                base = BoxRecord(
                    sample_id=sid,
                    translation=translation,
                    size=size,
                    yaw=yaw,
                    velocity=velocity,
                    category=category,
                    attribute=attribute,
                )
                return GroundTruthBox(base, instance, num_points, is_ignore)

            if is_ignore:
                zone = make(row.general_name)
                detection[sid].append(zone)
                tracking[sid].append(zone)
                continue
            detection[sid].append(make(row.detection_name))
            if row.tracking_name is not None:
                tracking[sid].append(make(row.tracking_name))

    return GroundTruthData(scenes, detection, tracking, ego_positions)


def save_ground_truth(
    path: str,
    scenes: list[Scene],
    gt: dict[str, list[GroundTruthBox]],
    ego_positions: dict[str, Vec2] | None = None,
) -> None:
    """Write ground truth (detection-category boxes) in the interchange form."""
    egos = ego_positions or {}
    scenes_out = []
    for scene in scenes:
        samples = []
        for sid, ts in scene.samples:
            entry: dict = {"sample_id": sid, "timestamp_us": ts}
            if sid in egos:
                ex, ey = egos[sid]
                entry["ego_translation"] = [ex, ey, 0.0]
            samples.append(entry)
        scenes_out.append(
            {"scene_id": scene.scene_id, "keyframe_rate": scene.keyframe_rate, "samples": samples}
        )

    annotations: dict[str, list[dict]] = {}
    for scene in scenes:
        for sid in scene.sample_ids:
            annotations[sid] = []
            for box in gt.get(sid, []):
                b = box.base
                if box.is_ignore_region:
                    general = "bicycle_rack"
                else:
                    general = _GENERAL_NAME_FOR.get(b.category, b.category)
                ann = {
                    "instance_token": box.instance_id,
                    "category": general,
                    "attribute": b.attribute or "",
                    "translation": list(b.translation),
                    "size": list(b.size),
                    "rotation": list(quat_from_yaw(b.yaw)),
                }
                if b.velocity is not None:
                    ann["velocity"] = list(b.velocity)
                if box.num_sensor_points is not None:
                    ann["num_lidar_pts"] = box.num_sensor_points
                    ann["num_radar_pts"] = 0
                if box.is_ignore_region:
                    ann["is_ignore_region"] = True
                annotations[sid].append(ann)

    _write_text(path, json.dumps({"scenes": scenes_out, "annotations": annotations}, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Submissions
# ---------------------------------------------------------------------------

def _load_submission_meta(data: dict) -> dict:
    meta = _get(data, "meta", "$")
    _expect(isinstance(meta, dict), "$.meta", "expected an object")
    out = {}
    for key in _SUBMISSION_META_KEYS:
        v = _get(meta, key, "$.meta")
        _expect(isinstance(v, bool), f"$.meta.{key}", "expected a boolean")
        out[key] = v
    return out


def load_detection_submission(path: str) -> tuple[dict[str, list[DetectionBox]], dict]:
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")
    meta = _load_submission_meta(data)
    results = _get(data, "results", "$")
    _expect(isinstance(results, dict), "$.results", "expected an object")

    out: dict[str, list[DetectionBox]] = {}
    for sid, boxes in results.items():
        rpath = f'results["{sid}"]'
        _expect(isinstance(boxes, list), rpath, "expected a list")
        parsed = []
        for k, raw in enumerate(boxes):
            bpath = f"{rpath}[{k}]"
            _expect(isinstance(raw, dict), bpath, "expected an object")
            token = _get(raw, "sample_token", bpath)
            _expect(token == sid, f"{bpath}.sample_token", f"does not match results key {sid!r}")
            score = _number(_get(raw, "detection_score", bpath), f"{bpath}.detection_score")
            _expect(0.0 <= score <= 1.0, f"{bpath}.detection_score", f"score {score} outside [0, 1]")
            base = BoxRecord(
                sample_id=sid,
                translation=_floats(_get(raw, "translation", bpath), 3, f"{bpath}.translation"),
                size=_floats(_get(raw, "size", bpath), 3, f"{bpath}.size"),
                yaw=_quat_to_yaw(_get(raw, "rotation", bpath), f"{bpath}.rotation"),
                velocity=_floats(_get(raw, "velocity", bpath), 2, f"{bpath}.velocity"),
                category=_get(raw, "detection_name", bpath),
                attribute=_get(raw, "attribute_name", bpath) or None,
            )
            parsed.append(DetectionBox(base, score))
        out[sid] = parsed
    return out, meta


def load_tracking_submission(path: str) -> tuple[dict[str, list[TrackBox]], dict]:
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")
    meta = _load_submission_meta(data)
    results = _get(data, "results", "$")
    _expect(isinstance(results, dict), "$.results", "expected an object")

    out: dict[str, list[TrackBox]] = {}
    for sid, boxes in results.items():
        rpath = f'results["{sid}"]'
        _expect(isinstance(boxes, list), rpath, "expected a list")
        parsed = []
        for k, raw in enumerate(boxes):
            bpath = f"{rpath}[{k}]"
            _expect(isinstance(raw, dict), bpath, "expected an object")
            token = _get(raw, "sample_token", bpath)
            _expect(token == sid, f"{bpath}.sample_token", f"does not match results key {sid!r}")
            score = _number(_get(raw, "tracking_score", bpath), f"{bpath}.tracking_score")
            _expect(0.0 <= score <= 1.0, f"{bpath}.tracking_score", f"score {score} outside [0, 1]")
            track_id = _get(raw, "tracking_id", bpath)
            _expect(isinstance(track_id, str) and track_id != "", f"{bpath}.tracking_id", "expected a non-empty string")
            base = BoxRecord(
                sample_id=sid,
                translation=_floats(_get(raw, "translation", bpath), 3, f"{bpath}.translation"),
                size=_floats(_get(raw, "size", bpath), 3, f"{bpath}.size"),
                yaw=_quat_to_yaw(_get(raw, "rotation", bpath), f"{bpath}.rotation"),
                velocity=_floats(_get(raw, "velocity", bpath), 2, f"{bpath}.velocity"),
                category=_get(raw, "tracking_name", bpath),
                attribute=None,
            )
            parsed.append(TrackBox(base, score, track_id))
        out[sid] = parsed
    return out, meta


def _box_common(b: BoxRecord) -> dict:
    return {
        "sample_token": b.sample_id,
        "translation": list(b.translation),
        "size": list(b.size),
        "rotation": list(quat_from_yaw(b.yaw)),
        "velocity": list(b.velocity) if b.velocity is not None else [0.0, 0.0],
    }


def save_detection_submission(
    path: str, preds: dict[str, list[DetectionBox]], meta: dict | None = None
) -> None:
    results = {}
    for sid in sorted(preds):
        rows = []
        for d in preds[sid]:
            row = _box_common(d.base)
            row["detection_name"] = d.base.category
            row["detection_score"] = d.score
            row["attribute_name"] = d.base.attribute or ""
            rows.append(row)
        results[sid] = rows
    payload = {"meta": dict(meta or DEFAULT_META), "results": results}
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def save_tracking_submission(
    path: str, preds: dict[str, list[TrackBox]], meta: dict | None = None
) -> None:
    results = {}
    for sid in sorted(preds):
        rows = []
        for t in preds[sid]:
            row = _box_common(t.base)
            row["tracking_name"] = t.base.category
            row["tracking_score"] = t.score
            row["tracking_id"] = t.tracking_id
            rows.append(row)
        results[sid] = rows
    payload = {"meta": dict(meta or DEFAULT_META), "results": results}
    _write_text(path, json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Raster mask and configs
# ---------------------------------------------------------------------------

def load_raster_mask(path: str) -> RasterMask:
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")
    origin = _floats(_get(data, "origin", "$"), 2, "$.origin")
    resolution = _number(_get(data, "resolution", "$"), "$.resolution")
    _expect(resolution > 0, "$.resolution", "must be positive")
    grid = _get(data, "grid", "$")
    _expect(isinstance(grid, list) and grid, "$.grid", "expected a non-empty list of rows")
    width = None
    for i, row in enumerate(grid):
        _expect(isinstance(row, list), f"$.grid[{i}]", "expected a list")
        if width is None:
            width = len(row)
        _expect(len(row) == width, f"$.grid[{i}]", "ragged rows")
    return RasterMask((origin[0], origin[1]), resolution, np.asarray(grid, dtype=bool))


def save_raster_mask(path: str, mask: RasterMask) -> None:
    payload = {
        "origin": list(mask.origin),
        "resolution": mask.resolution,
        "grid": mask.grid.astype(int).tolist(),
    }
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def load_eval_config(path: str | None) -> tuple[EvalConfig, float]:
    """Parse an evaluation config file; returns the config plus the map-mask
    distance allowance (meters, 0 keeps only boxes on the positive region)."""
    if path is None:
        return EvalConfig(), 0.0
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")
    known = {f.name for f in fields(EvalConfig)} | {"map_mask_max_distance"}
    for key in data:
        _expect(key in known, f"$.{key}", "unknown config field")
    kwargs = {}
    for f in fields(EvalConfig):
        if f.name in data:
            v = data[f.name]
            if f.name == "distance_thresholds":
                _expect(isinstance(v, list) and v, f"$.{f.name}", "expected a non-empty list")
                v = _floats(v, len(v), f"$.{f.name}")
            kwargs[f.name] = v
    mask_distance = float(data.get("map_mask_max_distance", 0.0))
    try:
        return EvalConfig(**kwargs), mask_distance
    except (TypeError, ValueError) as e:
        raise SchemaError("$", str(e)) from e


def load_synth_config(path: str) -> tuple[SynthConfig, NoiseModel]:
    data = _read_json(path)
    _expect(isinstance(data, dict), "$", "expected a JSON object")
    for key in data:
        _expect(key in ("scenes", "noise"), f"$.{key}", "unknown config section")
    scene_kwargs = dict(data.get("scenes", {}))
    noise_kwargs = dict(data.get("noise", {}))
    known_scene = {f.name for f in fields(SynthConfig)}
    known_noise = {f.name for f in fields(NoiseModel)}
    for key in scene_kwargs:
        _expect(key in known_scene, f"$.scenes.{key}", "unknown field")
    for key in noise_kwargs:
        _expect(key in known_noise, f"$.noise.{key}", "unknown field")
    if "speed_range" in scene_kwargs:
        scene_kwargs["speed_range"] = tuple(scene_kwargs["speed_range"])
    try:
        return SynthConfig(**scene_kwargs), NoiseModel(**noise_kwargs)
    except (TypeError, ValueError) as e:
        raise SchemaError("$", str(e)) from e


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------

def _frac(x: float) -> float:
    """Fractions and scores: 4 decimal places."""
    return round(float(x), 4)


def _unit(x: float) -> float:
    """Values in native units (m, rad, m/s, s, per-frame): 2 decimal places."""
    return round(float(x), 2)

_TP_ROUNDERS = {"ate": _unit, "ase": _frac, "aoe": _unit, "ave": _unit, "aae": _frac}


def render_detection_results(metrics: DetectionMetrics) -> str:
    categories = sorted({c for c, _ in metrics.ap})
    per_category = {}
    for c in categories:
        thresholds = sorted(t for cc, t in metrics.ap if cc == c)
        entry: dict = {"ap": {str(t): _frac(metrics.ap[(c, t)]) for t in thresholds}}
        for name in TP_METRICS:
            v = metrics.tp_errors.get((c, name))
            entry[name] = None if v is None else _TP_ROUNDERS[name](v)
        per_category[c] = entry
    aggregate = {
        "mean_ap": _frac(metrics.mean_ap),
        "mtp": {
            name: _TP_ROUNDERS[name](metrics.mtp[name])
            for name in TP_METRICS
            if name in metrics.mtp
        },
        "nds": _frac(metrics.nds),
    }
    return json.dumps({"per_category": per_category, "aggregate": aggregate}, indent=2) + "\n"


def save_detection_results(path: str, metrics: DetectionMetrics) -> None:
    _write_text(path, render_detection_results(metrics))


def render_tracking_results(metrics: TrackingMetrics) -> str:
    per_category = {}
    for c in sorted(metrics.per_category):
        m = metrics.per_category[c]
        per_category[c] = {
            "amota": _frac(m.amota),
            "amotp": _unit(m.amotp),
            "mota": _frac(m.mota),
            "motp": _unit(m.motp),
            "faf": _unit(m.faf),
            "mt": m.mt,
            "ml": m.ml,
            "fp": m.fp,
            "fn": m.fn,
            "ids": m.ids,
            "frag": m.frag,
            "tid": _unit(m.tid),
            "lgd": _unit(m.lgd),
            "num_gt": m.num_gt,
            "num_tracks": m.num_tracks,
            "best_confidence": None if m.best_confidence is None else _frac(m.best_confidence),
            "unachieved": m.unachieved,
        }
    aggregate = {
        "amota": _frac(metrics.amota),
        "amotp": _unit(metrics.amotp),
        "mota": _frac(metrics.mota),
        "motp": _unit(metrics.motp),
        "faf": _unit(metrics.faf),
        "mt": metrics.mt,
        "ml": metrics.ml,
        "fp": metrics.fp,
        "fn": metrics.fn,
        "ids": metrics.ids,
        "frag": metrics.frag,
        "tid": _unit(metrics.tid),
        "lgd": _unit(metrics.lgd),
    }
    return json.dumps({"per_category": per_category, "aggregate": aggregate}, indent=2) + "\n"


def save_tracking_results(path: str, metrics: TrackingMetrics) -> None:
    _write_text(path, render_tracking_results(metrics))


def render_matcher_table(rows: list[MatcherStudyRow]) -> str:
    lines = ["category,matcher,threshold,ap"]
    for r in rows:
        lines.append(f"{r.category},{r.matcher},{r.threshold},{r.ap:.4f}")
    return "\n".join(lines) + "\n"


def save_matcher_table(path: str, rows: list[MatcherStudyRow]) -> None:
    _write_text(path, render_matcher_table(rows))
