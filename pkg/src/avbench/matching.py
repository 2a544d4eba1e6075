"""Greedy confidence-ordered matching and interpolated PR / TP-error curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DetectionBox, GroundTruthBox, TrackBox
from .geometry import bev_iou, center_distance_2d, iou_3d

CENTER_DISTANCE = "center_distance"
IOU_BEV = "iou_bev"
IOU_3D = "iou_3d"

_KINDS = (CENTER_DISTANCE, IOU_BEV, IOU_3D)

ScoredBox = DetectionBox | TrackBox


@dataclass(frozen=True)
class MatchMetric:
    """Match predicate: center distance (match if d < threshold, meters) or
    IOU (match if iou >= threshold, fraction)."""

    kind: str = CENTER_DISTANCE
    threshold: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown match kind {self.kind!r}")
        if not self.threshold > 0:
            raise ValueError("match threshold must be positive")
        if self.kind != CENTER_DISTANCE and self.threshold > 1:
            raise ValueError("IOU threshold must be at most 1")


@dataclass(frozen=True)
class Match:
    pred: ScoredBox
    gt: GroundTruthBox
    distance: float
    iou: float | None = None


@dataclass(frozen=True)
class MatchSet:
    """Outcome of matching one (sample, category) cell.

    ``matches`` is confidence-descending; every prediction lands in exactly
    one of matches / false_positives, every GT in at most one match.
    """

    matches: tuple[Match, ...]
    false_positives: tuple[ScoredBox, ...]
    false_negatives: tuple[GroundTruthBox, ...]
    num_gt: int


def match_greedy(
    gts: list[GroundTruthBox], preds: list[ScoredBox], metric: MatchMetric
) -> MatchSet:
    """Match predictions to ground truth greedily in descending score order.

    Ties in score keep the input order. Each prediction takes the closest
    (center distance) or highest-IOU (IOU kinds) still-unmatched GT that
    satisfies the predicate; otherwise it becomes a false positive. Greedy,
    not optimal, by design: the result at any score cutoff is the prefix of
    the full run, which the recall sweeps rely on.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    matches: list[Match] = []
    false_positives: list[ScoredBox] = []

    for pi in order:
        pred = preds[pi]
        best_j = -1
        best_key = math.inf
        best_iou: float | None = None
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            if metric.kind == CENTER_DISTANCE:
                d = center_distance_2d(pred.base, gt.base)
                if d < metric.threshold and d < best_key:
                    best_j, best_key, best_iou = j, d, None
            else:
                iou_fn = bev_iou if metric.kind == IOU_BEV else iou_3d
                iou = iou_fn(pred.base, gt.base)
                # store negated IOU so "smaller key is better" holds throughout
                if iou >= metric.threshold and -iou < best_key:
                    best_j, best_key, best_iou = j, -iou, iou
        if best_j < 0:
            false_positives.append(pred)
        else:
            taken[best_j] = True
            gt = gts[best_j]
            matches.append(
                Match(pred, gt, center_distance_2d(pred.base, gt.base), best_iou)
            )

    false_negatives = tuple(gt for j, gt in enumerate(gts) if not taken[j])
    return MatchSet(tuple(matches), tuple(false_positives), false_negatives, len(gts))


@dataclass(frozen=True)
class PRCurve:
    """Precision and confidence sampled on an even recall grid over [0, 1]."""

    recalls: np.ndarray
    precision: np.ndarray
    confidence: np.ndarray
    num_gt: int


def _pooled_events(match_sets: list[MatchSet]) -> tuple[list[Match], np.ndarray, np.ndarray]:
    """Pool matches and FP scores across samples, score-descending, stable."""
    matches: list[Match] = []
    scored: list[tuple[float, bool, Match | None]] = []
    for ms in match_sets:
        for m in ms.matches:
            scored.append((m.pred.score, True, m))
        for fp in ms.false_positives:
            scored.append((fp.score, False, None))
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    scores = np.array([scored[i][0] for i in order], dtype=float)
    is_tp = np.array([scored[i][1] for i in order], dtype=bool)
    matches = [scored[i][2] for i in order if scored[i][1]]
    return matches, scores, is_tp


def pr_curve(match_sets: list[MatchSet], n: int = 101) -> PRCurve:
    """Build the interpolated precision-recall curve for one category cell.

    All predictions are pooled across samples and sorted by score (stable on
    ties), giving a raw TP/FP staircase. Precision and confidence are read
    onto an n-point recall grid by step interpolation: a grid point takes the
    values of the first raw point reaching its recall, and grid points beyond
    the maximum achieved recall get precision 0 and confidence 0.
    """
    num_gt = sum(ms.num_gt for ms in match_sets)
    if num_gt == 0:
        raise ValueError("pr_curve needs at least one ground-truth box")

    _, scores, is_tp = _pooled_events(match_sets)
    tp_cum = np.cumsum(is_tp)
    fp_cum = np.cumsum(~is_tp)
    raw_recall = tp_cum / num_gt
    raw_precision = tp_cum / (tp_cum + fp_cum)

    grid = np.linspace(0.0, 1.0, n)
    precision = np.zeros(n)
    confidence = np.zeros(n)
    if len(scores):
        # the 1e-12 slack absorbs one-ulp rounding at exact recall boundaries
        # (recall quanta are >= 1/num_gt, so it can never cross a real step)
        idx = np.searchsorted(raw_recall, grid - 1e-12, side="left")
        achieved = idx < len(scores)
        precision[achieved] = raw_precision[idx[achieved]]
        confidence[achieved] = scores[idx[achieved]]
    return PRCurve(grid, precision, confidence, num_gt)


@dataclass(frozen=True)
class TPSeries:
    """Cumulative-mean error series on the recall grid with an achieved mask."""

    recalls: np.ndarray
    values: np.ndarray
    achieved: np.ndarray


def tp_error_curves(
    match_sets: list[MatchSet],
    errors_fn,
    n: int = 101,
) -> dict[str, TPSeries]:
    """Map per-match errors onto the recall grid as running cumulative means.

    ``errors_fn(match)`` returns {metric_name: value or None}; None entries
    (per-box not-applicable markers) are skipped by the running mean. Matches
    are taken score-descending; a grid point holds the cumulative mean after
    the last match within its recall, with the first match backfilling lower
    grid points. Points beyond the maximum achieved recall are flagged.
    """
    num_gt = sum(ms.num_gt for ms in match_sets)
    if num_gt == 0:
        raise ValueError("tp_error_curves needs at least one ground-truth box")

    matches, _, _ = _pooled_events(match_sets)
    per_match = [errors_fn(m) for m in matches]
    names: list[str] = sorted({k for em in per_match for k in em})

    grid = np.linspace(0.0, 1.0, n)
    max_recall = len(matches) / num_gt
    achieved = grid <= max_recall + 1e-9
    # cumulative mean index per grid point: last match within that recall,
    # never below the first match
    ks = np.maximum(1, np.floor(grid * num_gt + 1e-9).astype(int))

    out: dict[str, TPSeries] = {}
    for name in names:
        cummean = np.zeros(len(matches))
        total = 0.0
        count = 0
        running = 0.0
        for i, em in enumerate(per_match):
            v = em.get(name)
            if v is not None:
                total += v
                count += 1
                running = total / count
            cummean[i] = running
        values = np.zeros(n)
        if len(matches):
            values[achieved] = cummean[np.minimum(ks[achieved], len(matches)) - 1]
        out[name] = TPSeries(grid, values, achieved)
    return out
