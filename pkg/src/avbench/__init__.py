"""Evaluation engine for 3D object detection and multi-object tracking."""

from .core import (
    BoxRecord,
    Category,
    DETECTION_CATEGORIES,
    DetectionBox,
    EvalConfig,
    GENERAL_CATEGORIES,
    GroundTruthBox,
    RasterMask,
    Scene,
    TRACKING_CATEGORIES,
    TaxonomyError,
    TrackBox,
    ValidationError,
    filter_eval_boxes,
    map_category,
    validate_submission,
)
from .detection import (
    DetectionMetrics,
    MatcherStudyRow,
    aggregate,
    calc_ap,
    calc_tp_metric,
    evaluate_detection,
    matching_study,
    per_match_errors,
)
from .geometry import (
    DecoratedCloud,
    RigidTransform,
    Sweep,
    accumulate_sweeps,
    bev_iou,
    center_distance_2d,
    compose,
    iou_3d,
    scale_iou,
    velocity_error,
    yaw_diff,
)
from .matching import (
    CENTER_DISTANCE,
    IOU_3D,
    IOU_BEV,
    Match,
    MatchMetric,
    MatchSet,
    PRCurve,
    match_greedy,
    pr_curve,
    tp_error_curves,
)
from .synth import (
    NoiseModel,
    SynthConfig,
    generate_scenes,
    perturb_detections,
    perturb_tracks,
)
from .tracking import (
    ThresholdStats,
    TrackingMetrics,
    amota_amotp,
    evaluate_tracking,
    motar,
)

__version__ = "0.1.0"

__all__ = [
    "BoxRecord",
    "CENTER_DISTANCE",
    "Category",
    "DETECTION_CATEGORIES",
    "DecoratedCloud",
    "DetectionBox",
    "DetectionMetrics",
    "EvalConfig",
    "GENERAL_CATEGORIES",
    "GroundTruthBox",
    "IOU_3D",
    "IOU_BEV",
    "Match",
    "MatchMetric",
    "MatchSet",
    "MatcherStudyRow",
    "NoiseModel",
    "PRCurve",
    "RasterMask",
    "RigidTransform",
    "Scene",
    "Sweep",
    "SynthConfig",
    "TRACKING_CATEGORIES",
    "TaxonomyError",
    "ThresholdStats",
    "TrackBox",
    "TrackingMetrics",
    "ValidationError",
    "accumulate_sweeps",
    "aggregate",
    "amota_amotp",
    "bev_iou",
    "calc_ap",
    "calc_tp_metric",
    "center_distance_2d",
    "compose",
    "evaluate_detection",
    "evaluate_tracking",
    "filter_eval_boxes",
    "generate_scenes",
    "iou_3d",
    "map_category",
    "match_greedy",
    "matching_study",
    "motar",
    "per_match_errors",
    "perturb_detections",
    "perturb_tracks",
    "pr_curve",
    "scale_iou",
    "tp_error_curves",
    "validate_submission",
    "velocity_error",
    "yaw_diff",
]
