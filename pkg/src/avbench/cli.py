"""Command-line interface: eval-detection, eval-tracking, synth, and
compare-matchers subcommands over the interchange file formats.

Exit codes: 0 success, 2 validation/schema error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .core import (
    DETECTION_CATEGORIES,
    RasterMask,
    TRACKING_CATEGORIES,
    TaxonomyError,
    ValidationError,
    filter_eval_boxes,
    validate_submission,
)
from .detection import (
    TP_METRICS,
    DetectionMetrics,
    evaluate_detection,
    matching_study,
)
from .matching import CENTER_DISTANCE, IOU_3D, IOU_BEV
from .formats import (
    SchemaError,
    load_detection_submission,
    load_eval_config,
    load_ground_truth,
    load_raster_mask,
    load_synth_config,
    load_tracking_submission,
    render_detection_results,
    render_matcher_table,
    render_tracking_results,
    save_detection_results,
    save_detection_submission,
    save_ground_truth,
    save_matcher_table,
    save_tracking_results,
    save_tracking_submission,
)
from .synth import generate_scenes, perturb_detections, perturb_tracks
from .tracking import TrackingMetrics, evaluate_tracking

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3

_MATCHER_KINDS = {"cd": CENTER_DISTANCE, "iou_bev": IOU_BEV, "iou_3d": IOU_3D}


def _workers() -> int:
    raw = os.environ.get("AVBENCH_THREADS", "")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise SchemaError("AVBENCH_THREADS", f"expected an integer, got {raw!r}")


def _parse_categories(raw: str | None, allowed: tuple[str, ...]) -> tuple[str, ...] | None:
    if raw is None:
        return None
    names = tuple(x.strip() for x in raw.split(",") if x.strip())
    for name in names:
        if name not in allowed:
            raise SchemaError("--categories", f"unknown category {name!r}")
    return names


def _print_detection_table(metrics: DetectionMetrics) -> None:
    categories = sorted({c for c, _ in metrics.ap})
    thresholds = sorted({t for _, t in metrics.ap})
    header = ["category"] + [f"ap@{t:g}" for t in thresholds] + list(TP_METRICS)
    print("  ".join(f"{h:>12}" for h in header))
    for c in categories:
        row = [f"{c:>12}"]
        for t in thresholds:
            v = metrics.ap.get((c, t))
            row.append(f"{v:12.4f}" if v is not None else f"{'-':>12}")
        for name in TP_METRICS:
            v = metrics.tp_errors.get((c, name))
            row.append(f"{v:12.4f}" if v is not None else f"{'n/a':>12}")
        print("  ".join(row))
    print(f"mean_ap: {metrics.mean_ap:.4f}  nds: {metrics.nds:.4f}")


def _print_tracking_table(metrics: TrackingMetrics) -> None:
    header = ["category", "amota", "amotp", "mota", "motp", "ids", "frag", "tid", "lgd"]
    print("  ".join(f"{h:>10}" for h in header))
    for c in sorted(metrics.per_category):
        m = metrics.per_category[c]
        print(
            "  ".join(
                [
                    f"{c:>10}",
                    f"{m.amota:10.4f}",
                    f"{m.amotp:10.2f}",
                    f"{m.mota:10.4f}",
                    f"{m.motp:10.2f}",
                    f"{m.ids:10d}",
                    f"{m.frag:10d}",
                    f"{m.tid:10.2f}",
                    f"{m.lgd:10.2f}",
                ]
            )
        )
    print(f"amota: {metrics.amota:.4f}  amotp: {metrics.amotp:.2f} m")


def _load_mask(path: str | None) -> RasterMask | None:
    return None if path is None else load_raster_mask(path)


def _cmd_eval_detection(args: argparse.Namespace) -> int:
    config, mask_distance = load_eval_config(args.config)
    mask = _load_mask(args.map_mask)
    data = load_ground_truth(args.ground_truth)
    preds, _ = load_detection_submission(args.submission)
    categories = _parse_categories(args.categories, DETECTION_CATEGORIES)

    gt_flat = [b for sid in data.detection for b in data.detection[sid]]
    gt_grouped = validate_submission(gt_flat, data.scenes)
    pred_flat = [b for sid in preds for b in preds[sid]]
    pred_grouped = validate_submission(pred_flat, data.scenes)

    gt_f, preds_f = filter_eval_boxes(
        gt_grouped,
        pred_grouped,
        config,
        mask,
        ego_positions=data.ego_positions,
        map_mask_max_distance=mask_distance,
    )
    metrics = evaluate_detection(
        gt_f,
        preds_f,
        config,
        matcher_kind=_MATCHER_KINDS[args.matcher],
        categories=categories,
        workers=_workers(),
    )
    save_detection_results(args.output, metrics)
    sys.stdout.write(render_detection_results(metrics))
    _print_detection_table(metrics)
    return EXIT_OK


def _cmd_eval_tracking(args: argparse.Namespace) -> int:
    config, mask_distance = load_eval_config(args.config)
    mask = _load_mask(args.map_mask)
    data = load_ground_truth(args.ground_truth)
    preds, _ = load_tracking_submission(args.submission)
    categories = _parse_categories(args.categories, TRACKING_CATEGORIES)

    gt_flat = [b for sid in data.tracking for b in data.tracking[sid]]
    gt_grouped = validate_submission(gt_flat, data.scenes)
    pred_flat = [b for sid in preds for b in preds[sid]]
    pred_grouped = validate_submission(pred_flat, data.scenes)

    gt_f, preds_f = filter_eval_boxes(
        gt_grouped,
        pred_grouped,
        config,
        mask,
        ego_positions=data.ego_positions,
        map_mask_max_distance=mask_distance,
    )
    metrics = evaluate_tracking(
        gt_f,
        preds_f,
        data.scenes,
        config,
        categories=categories,
        workers=_workers(),
    )
    save_tracking_results(args.output, metrics)
    sys.stdout.write(render_tracking_results(metrics))
    _print_tracking_table(metrics)
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    scene_config, noise = load_synth_config(args.config)
    data = generate_scenes(scene_config)
    detections = perturb_detections(data.gt_detection, noise, scene_config.seed)
    tracks = perturb_tracks(data.gt_tracking, noise, scene_config.seed)

    os.makedirs(args.out_dir, exist_ok=True)
    egos = {
        sid: (pose.translation[0], pose.translation[1])
        for sid, pose in data.ego_poses.items()
    }
    save_ground_truth(
        os.path.join(args.out_dir, "ground_truth.json"),
        data.scenes,
        data.gt_detection,
        egos,
    )
    save_detection_submission(
        os.path.join(args.out_dir, "detections.json"), detections
    )
    save_tracking_submission(os.path.join(args.out_dir, "tracks.json"), tracks)
    print(f"wrote ground_truth.json, detections.json, tracks.json to {args.out_dir}")
    return EXIT_OK


def _cmd_compare_matchers(args: argparse.Namespace) -> int:
    config, mask_distance = load_eval_config(args.config)
    mask = _load_mask(args.map_mask)
    data = load_ground_truth(args.ground_truth)
    preds, _ = load_detection_submission(args.submission)

    gt_flat = [b for sid in data.detection for b in data.detection[sid]]
    gt_grouped = validate_submission(gt_flat, data.scenes)
    pred_flat = [b for sid in preds for b in preds[sid]]
    pred_grouped = validate_submission(pred_flat, data.scenes)

    gt_f, preds_f = filter_eval_boxes(
        gt_grouped,
        pred_grouped,
        config,
        mask,
        ego_positions=data.ego_positions,
        map_mask_max_distance=mask_distance,
    )
    rows = matching_study(gt_f, preds_f, config, iou_kind=_MATCHER_KINDS[args.matcher])
    save_matcher_table(args.output, rows)
    sys.stdout.write(render_matcher_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avbench",
        description="Evaluation engine for 3D detection and tracking benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_eval(p: argparse.ArgumentParser, default_output: str) -> None:
        p.add_argument("ground_truth", help="ground-truth file")
        p.add_argument("submission", help="submission file")
        p.add_argument("--config", default=None, help="evaluation config file")
        p.add_argument("--map-mask", default=None, help="raster mask file")
        p.add_argument("--output", default=default_output, help="results file path")
        p.add_argument(
            "--categories",
            default=None,
            help="comma-separated category subset to evaluate",
        )

    p = sub.add_parser("eval-detection", help="score a detection submission")
    common_eval(p, "detection_metrics.json")
    p.add_argument(
        "--matcher",
        choices=sorted(_MATCHER_KINDS),
        default="cd",
        help="match predicate for AP (TP errors always use center distance)",
    )
    p.set_defaults(func=_cmd_eval_detection)

    p = sub.add_parser("eval-tracking", help="score a tracking submission")
    common_eval(p, "tracking_metrics.json")
    p.set_defaults(func=_cmd_eval_tracking)

    p = sub.add_parser("synth", help="generate a synthetic benchmark fixture")
    p.add_argument("config", help="synthesis config file")
    p.add_argument("out_dir", help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser(
        "compare-matchers", help="AP per category under each matching function"
    )
    common_eval(p, "matcher_table.csv")
    p.add_argument(
        "--matcher",
        choices=["iou_bev", "iou_3d"],
        default="iou_3d",
        help="IOU variant for the comparison column",
    )
    p.set_defaults(func=_cmd_compare_matchers)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValidationError, TaxonomyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
