"""Recall-swept tracking metrics: MOTAR averaging, CLEAR-MOT counts at the
best threshold, and track initialization / gap durations."""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EvalConfig, GroundTruthBox, Scene, TrackBox
from .matching import CENTER_DISTANCE, MatchMetric, match_greedy

MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


def motar(ids: int, fp: int, fn: int, r: float, p: int) -> float | None:
    """Recall-normalized accuracy at target recall r.

    max(0, 1 - (ids + fp + fn - (1-r)P) / (rP)), additionally capped at 1 so
    the value stays in [0, 1]: when every error budget is underspent (e.g. a
    perfect submission whose uniform scores pull the whole run into every
    threshold prefix) the raw formula exceeds 1. None when P = 0.
    """
    if p == 0:
        return None
    raw = 1.0 - (ids + fp + fn - (1.0 - r) * p) / (r * p)
    return min(1.0, max(0.0, raw))


@dataclass(frozen=True)
class ThresholdStats:
    """Counts and scores at one recall target of the sweep.

    ``confidence`` is None when the target recall is not achievable; such
    points carry the worst-case values (motar 0, motp = the match distance
    gate) so sweep averages can consume them directly.
    """

    recall_target: float
    confidence: float | None
    tp: int
    fp: int
    fn: int
    ids: int
    frag: int
    motar: float
    motp: float
    num_gt: int


@dataclass(frozen=True)
class CategoryTracking:
    """Per-category sweep results plus the best-threshold traditional block."""

    category: str
    amota: float
    amotp: float
    mota: float
    motp: float
    faf: float
    mt: int
    ml: int
    fp: int
    fn: int
    ids: int
    frag: int
    tid: float
    lgd: float
    num_gt: int
    num_tracks: int
    best_confidence: float | None
    sweep: tuple[ThresholdStats, ...]

    @property
    def unachieved(self) -> bool:
        return self.best_confidence is None


@dataclass(frozen=True)
class TrackingMetrics:
    """Headline tracking scorecard: sweep averages and count totals are
    reduced over categories (means for ratios, sums for counts)."""

    amota: float
    amotp: float
    mota: float
    motp: float
    faf: float
    mt: int
    ml: int
    fp: int
    fn: int
    ids: int
    frag: int
    tid: float
    lgd: float
    per_category: dict[str, CategoryTracking]


TrackKey = tuple[str, str]  # (scene_id, instance_id)


@dataclass(frozen=True)
class _Event:
    score: float
    track: TrackKey
    pred_id: str
    distance: float


@dataclass
class _Frame:
    scene_id: str
    index: int  # scene-local frame position
    events: list[_Event]
    pred_scores: list[float]  # ascending, for bisect


@dataclass
class _CategoryData:
    frames: list[_Frame]  # scene-major, frame order within scene
    num_gt: int
    track_frames: dict[TrackKey, list[int]]  # GT presence per track
    rates: dict[str, float]  # scene_id -> keyframe rate
    match_scores: np.ndarray  # all match scores, descending


def _collect(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[TrackBox]],
    scenes: list[Scene],
    category: str,
    tp_distance: float,
) -> _CategoryData:
    """Run the full greedy match once per frame and index everything the
    threshold sweep needs. Restricting to predictions with score >= c later
    reproduces greedy matching on that subset exactly (prefix property)."""
    metric = MatchMetric(CENTER_DISTANCE, tp_distance)
    frames: list[_Frame] = []
    num_gt = 0
    track_frames: dict[TrackKey, list[int]] = {}
    rates: dict[str, float] = {}
    all_scores: list[float] = []

    for scene in scenes:
        rates[scene.scene_id] = scene.keyframe_rate
        for index, sample_id in enumerate(scene.sample_ids):
            g = [b for b in gts.get(sample_id, []) if b.base.category == category]
            p = [b for b in preds.get(sample_id, []) if b.base.category == category]
            num_gt += len(g)
            for box in g:
                key = (scene.scene_id, box.instance_id)
                track_frames.setdefault(key, []).append(index)
            ms = match_greedy(g, p, metric)
            events = [
                _Event(
                    m.pred.score,
                    (scene.scene_id, m.gt.instance_id),
                    m.pred.tracking_id,
                    m.distance,
                )
                for m in ms.matches
            ]
            all_scores.extend(e.score for e in events)
            frames.append(
                _Frame(
                    scene.scene_id,
                    index,
                    events,
                    sorted(b.score for b in p),
                )
            )

    match_scores = np.sort(np.asarray(all_scores, dtype=float))[::-1]
    return _CategoryData(frames, num_gt, track_frames, rates, match_scores)


@dataclass
class _ThresholdOutcome:
    tp: int
    fp: int
    ids: int
    frag: int
    motp_sum: float
    matched_frames: dict[TrackKey, set[int]]
    total_frames: int


def _eval_threshold(data: _CategoryData, c: float) -> _ThresholdOutcome:
    """Replay the stored match events at confidence threshold c."""
    tp = 0
    fp = 0
    ids = 0
    frag_total = 0
    motp_sum = 0.0
    matched: dict[TrackKey, set[int]] = {}
    last_id: dict[TrackKey, str] = {}
    current_scene: str | None = None

    for frame in data.frames:
        if frame.scene_id != current_scene:
            current_scene = frame.scene_id
            last_id = {}
        kept = [e for e in frame.events if e.score >= c]
        n_preds = len(frame.pred_scores) - bisect.bisect_left(frame.pred_scores, c)
        fp += n_preds - len(kept)
        tp += len(kept)
        for e in kept:
            motp_sum += e.distance
            prev = last_id.get(e.track)
            if prev is not None and prev != e.pred_id:
                ids += 1
            last_id[e.track] = e.pred_id
            matched.setdefault(e.track, set()).add(frame.index)

    for key, present in data.track_frames.items():
        hits = matched.get(key)
        if not hits:
            continue
        in_gap = False
        seen_hit = False
        for idx in present:
            if idx in hits:
                if seen_hit and in_gap:
                    frag_total += 1
                seen_hit = True
                in_gap = False
            elif seen_hit:
                in_gap = True

    return _ThresholdOutcome(
        tp, fp, ids, frag_total, motp_sum, matched, len(data.frames)
    )


def _tid_lgd(
    data: _CategoryData, matched: dict[TrackKey, set[int]]
) -> tuple[float, float]:
    """Mean initialization delay and longest-gap duration over GT tracks.

    Gaps are counted in missed keyframes over the scene rate; a track never
    matched contributes its full duration (last minus first GT time) to both.
    """
    if not data.track_frames:
        return 0.0, 0.0
    tids: list[float] = []
    lgds: list[float] = []
    for key, present in data.track_frames.items():
        rate = data.rates[key[0]]
        hits = matched.get(key, set())
        duration = (present[-1] - present[0]) / rate
        hit_positions = [i for i, idx in enumerate(present) if idx in hits]
        if not hit_positions:
            tids.append(duration)
            lgds.append(duration)
            continue
        tids.append((present[hit_positions[0]] - present[0]) / rate)
        longest_run = 0
        run = 0
        for idx in present:
            if idx in hits:
                longest_run = max(longest_run, run)
                run = 0
            else:
                run += 1
        longest_run = max(longest_run, run)
        lgds.append(longest_run / rate)
    return math.fsum(tids) / len(tids), math.fsum(lgds) / len(lgds)


def recall_sweep(
    data: _CategoryData, config: EvalConfig
) -> tuple[list[ThresholdStats], list[_ThresholdOutcome | None]]:
    """Evaluate each recall target of the sweep.

    The confidence for a target r is the score of the ceil(r * P)-th best
    match of the full run: the highest threshold whose prefix reaches the
    target recall. Targets beyond the maximum achievable recall are marked
    unachieved and carry worst-case values.
    """
    p = data.num_gt
    targets = np.linspace(
        config.min_recall, 1.0, config.tracking_recall_points
    )
    stats: list[ThresholdStats] = []
    outcomes: list[_ThresholdOutcome | None] = []
    for r in targets:
        needed = math.ceil(r * p - 1e-9)
        if needed < 1:
            needed = 1
        if needed > len(data.match_scores):
            stats.append(
                ThresholdStats(
                    float(r), None, 0, 0, p, 0, 0, 0.0, config.tp_distance, p
                )
            )
            outcomes.append(None)
            continue
        c = float(data.match_scores[needed - 1])
        out = _eval_threshold(data, c)
        fn = p - out.tp
        m = motar(out.ids, out.fp, fn, float(r), p)
        motp = out.motp_sum / out.tp if out.tp else config.tp_distance
        stats.append(
            ThresholdStats(
                float(r), c, out.tp, out.fp, fn, out.ids, out.frag, m, motp, p
            )
        )
        outcomes.append(out)
    return stats, outcomes


def amota_amotp(stats: list[ThresholdStats]) -> tuple[float, float]:
    """Average MOTAR and MOTP over the sweep; unachieved points already hold
    motar 0 and worst-case motp, so this is a plain mean."""
    if not stats:
        raise ValueError("amota_amotp needs a non-empty sweep")
    amota = math.fsum(s.motar for s in stats) / len(stats)
    amotp = math.fsum(s.motp for s in stats) / len(stats)
    return amota, amotp


def best_threshold_index(stats: list[ThresholdStats]) -> int | None:
    """Index of the achieved sweep point with the highest MOTAR, ties going
    to the higher recall target. None when nothing is achieved."""
    best: int | None = None
    for i, s in enumerate(stats):
        if s.confidence is None:
            continue
        if best is None or (s.motar, s.recall_target) >= (
            stats[best].motar,
            stats[best].recall_target,
        ):
            best = i
    return best


def _eval_category(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[TrackBox]],
    scenes: list[Scene],
    category: str,
    config: EvalConfig,
) -> CategoryTracking:
    data = _collect(gts, preds, scenes, category, config.tp_distance)
    stats, outcomes = recall_sweep(data, config)
    amota, amotp = amota_amotp(stats)

    best_i = best_threshold_index(stats)
    if best_i is None:
        # nothing achieved: report the empty-submission worst case
        out = _eval_threshold(data, math.inf)
    else:
        out = outcomes[best_i]
    p = data.num_gt
    tp = out.tp
    fn = p - tp
    mota = max(0.0, 1.0 - (out.ids + out.fp + fn) / p) if p else 0.0
    motp = out.motp_sum / tp if tp else config.tp_distance
    faf = out.fp / out.total_frames if out.total_frames else 0.0

    mt = 0
    ml = 0
    for key, present in data.track_frames.items():
        hits = out.matched_frames.get(key, set())
        coverage = sum(1 for idx in present if idx in hits) / len(present)
        if coverage >= MT_COVERAGE:
            mt += 1
        if coverage <= ML_COVERAGE:
            ml += 1

    tid, lgd = _tid_lgd(data, out.matched_frames)
    return CategoryTracking(
        category=category,
        amota=amota,
        amotp=amotp,
        mota=mota,
        motp=motp,
        faf=faf,
        mt=mt,
        ml=ml,
        fp=out.fp,
        fn=fn,
        ids=out.ids,
        frag=out.frag,
        tid=tid,
        lgd=lgd,
        num_gt=p,
        num_tracks=len(data.track_frames),
        best_confidence=None if best_i is None else stats[best_i].confidence,
        sweep=tuple(stats),
    )


def evaluate_tracking(
    gts: dict[str, list[GroundTruthBox]],
    preds: dict[str, list[TrackBox]],
    scenes: list[Scene],
    config: EvalConfig,
    *,
    categories: tuple[str, ...] | None = None,
    workers: int = 1,
) -> TrackingMetrics:
    """Score a tracking submission against ground truth.

    Categories are those present in the ground truth (optionally narrowed);
    matching uses center distance at ``tp_distance``. Headline values
    average ratio metrics and sum count metrics over categories; the result
    does not depend on ``workers``.
    """
    present = sorted({b.base.category for boxes in gts.values() for b in boxes})
    if categories is not None:
        present = [c for c in present if c in categories]
    if not present:
        raise ValueError("no ground-truth categories to evaluate")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                c: pool.submit(_eval_category, gts, preds, scenes, c, config)
                for c in present
            }
            per_category = {c: f.result() for c, f in futures.items()}
    else:
        per_category = {
            c: _eval_category(gts, preds, scenes, c, config) for c in present
        }

    n = len(present)

    def mean(attr: str) -> float:
        return math.fsum(getattr(per_category[c], attr) for c in present) / n

    def total(attr: str) -> int:
        return sum(getattr(per_category[c], attr) for c in present)

    return TrackingMetrics(
        amota=mean("amota"),
        amotp=mean("amotp"),
        mota=mean("mota"),
        motp=mean("motp"),
        faf=mean("faf"),
        mt=total("mt"),
        ml=total("ml"),
        fp=total("fp"),
        fn=total("fn"),
        ids=total("ids"),
        frag=total("frag"),
        tid=mean("tid"),
        lgd=mean("lgd"),
        per_category=per_category,
    )
