"""Detection metrics: AP over distance thresholds, TP errors, and the
composite detection score, plus the matching-function comparison study."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .core import DetectionBox, EvalConfig, GroundTruthBox
from .geometry import center_distance_2d, scale_iou, velocity_error, yaw_diff
from .matching import (
    CENTER_DISTANCE,
    IOU_3D,
    Match,
    MatchMetric,
    MatchSet,
    PRCurve,
    TPSeries,
    match_greedy,
    pr_curve,
    tp_error_curves,
)

TP_METRICS = ("ate", "ase", "aoe", "ave", "aae")

# Static classes carry no velocity or attribute annotations; barriers are
# additionally symmetric front-to-back, so orientation lives on a half turn.
NO_ORIENT = frozenset({"traffic_cone"})
NO_VELOCITY = frozenset({"traffic_cone", "barrier"})
NO_ATTRIBUTE = frozenset({"traffic_cone", "barrier"})
HALF_TURN_ORIENT = frozenset({"barrier"})

# Conventional per-category IOU gates for the matcher comparison; 0.5 is the
# fallback for categories the convention does not name.
KITTI_IOU_THRESHOLDS = {"car": 0.7, "pedestrian": 0.5, "bicycle": 0.5}
DEFAULT_IOU_THRESHOLD = 0.5


def tp_channels(category: str) -> tuple[str, ...]:
    """TP-error metric names applicable to a category."""
    names = ["ate", "ase"]
    if category not in NO_ORIENT:
        names.append("aoe")
    if category not in NO_VELOCITY:
        names.append("ave")
    if category not in NO_ATTRIBUTE:
        names.append("aae")
    return tuple(names)


def per_match_errors(match: Match) -> dict[str, float | None]:
    """TP errors for one matched pair, keyed by metric name.

    Channels that do not apply to the category are omitted entirely; a
    missing velocity on an otherwise eligible pair yields None (skipped by
    the curve's running mean rather than penalized).
    """
    pred, gt = match.pred.base, match.gt.base
    category = gt.category
    out: dict[str, float | None] = {
        "ate": center_distance_2d(pred, gt),
        "ase": 1.0 - scale_iou(pred.size, gt.size),
    }
    if category not in NO_ORIENT:
        period = math.pi if category in HALF_TURN_ORIENT else 2.0 * math.pi
        out["aoe"] = yaw_diff(pred.yaw, gt.yaw, period)
    if category not in NO_VELOCITY:
        out["ave"] = velocity_error(pred, gt)
    if category not in NO_ATTRIBUTE:
        out["aae"] = 0.0 if pred.attribute == gt.attribute else 1.0
    return out


def calc_ap(curve: PRCurve, min_recall: float, min_precision: float) -> float:
    """Normalized area under the PR curve above the recall/precision floors.

    Mean over grid points with recall > min_recall of
    max(0, precision - min_precision), normalized by (1 - min_precision).
    A perfect curve gives exactly 1; a curve never exceeding the floors
    gives 0.
    """
    terms = [
        max(0.0, p - min_precision)
        for r, p in zip(curve.recalls, curve.precision)
        if r > min_recall
    ]
    if not terms:
        return 0.0
    return math.fsum(terms) / (len(terms) * (1.0 - min_precision))


def calc_tp_metric(series: TPSeries, min_recall: float) -> float:
    """Average of the cumulative mean over achieved recall points above the
    floor; 1.0 when the curve never gets past the floor."""
    values = [
        v
        for r, v, ok in zip(series.recalls, series.values, series.achieved)
        if ok and r > min_recall
    ]
    if not values:
        return 1.0
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class DetectionMetrics:
    """Full detection scorecard.

    ``ap`` is keyed by (category, threshold); ``tp_errors`` by
    (category, metric name) with None marking not-applicable channels;
    ``mtp`` holds the per-metric means over categories where defined.
    """

    ap: dict[tuple[str, float], float]
    tp_errors: dict[tuple[str, str], float | None]
    mean_ap: float
    mtp: dict[str, float]
    nds: float


def aggregate(
    ap_table: dict[tuple[str, float], float],
    tp_table: dict[tuple[str, str], float | None],
    config: EvalConfig,
) -> DetectionMetrics:
    """Reduce per-cell AP and TP tables to mAP, per-metric means, and the
    composite score (mAP weighted 5, each bounded TP term weighted 1)."""
    if not ap_table:
        raise ValueError("aggregate needs at least one evaluated category")
    mean_ap = math.fsum(ap_table.values()) / len(ap_table)

    mtp: dict[str, float] = {}
    for name in TP_METRICS:
        vals = [v for (_, m), v in tp_table.items() if m == name and v is not None]
        if vals:
            mtp[name] = math.fsum(vals) / len(vals)

    score = 5.0 * mean_ap
    for name in TP_METRICS:
        if name in mtp:
            score += 1.0 - min(1.0, mtp[name])
    nds = score / 10.0
    return DetectionMetrics(dict(ap_table), dict(tp_table), mean_ap, mtp, nds)


def _category_cell(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[DetectionBox]],
    category: str,
    metric: MatchMetric,
) -> list[MatchSet]:
    sample_ids = sorted(set(gts) | set(preds))
    sets = []
    for sid in sample_ids:
        g = [b for b in gts.get(sid, []) if b.base.category == category]
        p = [b for b in preds.get(sid, []) if b.base.category == category]
        sets.append(match_greedy(g, p, metric))
    return sets


def _eval_category(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[DetectionBox]],
    category: str,
    config: EvalConfig,
    matcher_kind: str,
) -> tuple[dict[float, float], dict[str, float | None]]:
    """AP per threshold plus TP errors (at tp_distance) for one category."""
    n = config.recall_samples
    if matcher_kind == CENTER_DISTANCE:
        thresholds = tuple(config.distance_thresholds)
    else:
        thresholds = (
            KITTI_IOU_THRESHOLDS.get(category, DEFAULT_IOU_THRESHOLD),
        )

    ap_by_threshold: dict[float, float] = {}
    for t in thresholds:
        sets = _category_cell(gts, preds, category, MatchMetric(matcher_kind, t))
        curve = pr_curve(sets, n)
        ap_by_threshold[t] = calc_ap(curve, config.min_recall, config.min_precision)

    tp_sets = _category_cell(
        gts, preds, category, MatchMetric(CENTER_DISTANCE, config.tp_distance)
    )
    series = tp_error_curves(tp_sets, per_match_errors, n)
    tp_errors: dict[str, float | None] = {}
    for name in TP_METRICS:
        if name not in tp_channels(category):
            tp_errors[name] = None
        elif name in series:
            tp_errors[name] = calc_tp_metric(series[name], config.min_recall)
        else:
            # no matches at all: the curve never reaches the recall floor
            tp_errors[name] = 1.0
    return ap_by_threshold, tp_errors


def evaluate_detection(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[DetectionBox]],
    config: EvalConfig,
    *,
    matcher_kind: str = CENTER_DISTANCE,
    categories: tuple[str, ...] | None = None,
    workers: int = 1,
) -> DetectionMetrics:
    """Score a detection submission against ground truth.

    Inputs are validated, filtered, sample-grouped box maps. Categories are
    those present in the ground truth (optionally narrowed by ``categories``);
    AP is computed per matcher threshold and TP errors at the center-distance
    ``tp_distance`` gate. ``workers`` > 1 evaluates category cells in a
    thread pool; results are independent of the worker count.
    """
    present = sorted({b.base.category for boxes in gts.values() for b in boxes})
    if categories is not None:
        present = [c for c in present if c in categories]
    if not present:
        raise ValueError("no ground-truth categories to evaluate")

    results: dict[str, tuple[dict[float, float], dict[str, float | None]]] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                c: pool.submit(_eval_category, gts, preds, c, config, matcher_kind)
                for c in present
            }
            results = {c: f.result() for c, f in futures.items()}
    else:
        results = {
            c: _eval_category(gts, preds, c, config, matcher_kind) for c in present
        }

    ap_table: dict[tuple[str, float], float] = {}
    tp_table: dict[tuple[str, str], float | None] = {}
    for c in present:
        ap_by_threshold, tp_errors = results[c]
        for t, ap in ap_by_threshold.items():
            ap_table[(c, t)] = ap
        for name, v in tp_errors.items():
            tp_table[(c, name)] = v
    return aggregate(ap_table, tp_table, config)


@dataclass(frozen=True)
class MatcherStudyRow:
    category: str
    matcher: str
    threshold: float
    ap: float


def matching_study(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[DetectionBox]],
    config: EvalConfig,
    *,
    iou_kind: str = IOU_3D,
) -> list[MatcherStudyRow]:
    """Per-category AP under center-distance matching at every distance
    threshold and under IOU matching at the conventional per-category gate.

    Emits one row per (category, matcher cell): |C| * (|D| + 1) rows.
    """
    present = sorted({b.base.category for boxes in gts.values() for b in boxes})
    if not present:
        raise ValueError("no ground-truth categories to evaluate")

    rows: list[MatcherStudyRow] = []
    n = config.recall_samples
    for c in present:
        for t in config.distance_thresholds:
            sets = _category_cell(gts, preds, c, MatchMetric(CENTER_DISTANCE, t))
            ap = calc_ap(pr_curve(sets, n), config.min_recall, config.min_precision)
            rows.append(MatcherStudyRow(c, CENTER_DISTANCE, t, ap))
        iou_t = KITTI_IOU_THRESHOLDS.get(c, DEFAULT_IOU_THRESHOLD)
        sets = _category_cell(gts, preds, c, MatchMetric(iou_kind, iou_t))
        ap = calc_ap(pr_curve(sets, n), config.min_recall, config.min_precision)
        rows.append(MatcherStudyRow(c, iou_kind, iou_t, ap))
    return rows
