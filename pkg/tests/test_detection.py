"""Detection scoring: AP, TP-error metrics, and the composite score."""

from __future__ import annotations

import math

import numpy as np
import pytest

from avbench import (
    CENTER_DISTANCE,
    IOU_BEV,
    BoxRecord,
    DetectionBox,
    EvalConfig,
    GroundTruthBox,
    Match,
    MatchMetric,
    aggregate,
    calc_ap,
    calc_tp_metric,
    evaluate_detection,
    match_greedy,
    matching_study,
    per_match_errors,
    pr_curve,
    tp_error_curves,
)
from avbench.detection import tp_channels
from avbench.matching import TPSeries


def gt(x, y=0.0, category="car", instance_id="g", yaw=0.0, size=(2.0, 4.5, 1.7),
       velocity=(1.0, 0.0), attribute="vehicle.moving"):
    base = BoxRecord("s", (x, y, 1.0), size, yaw, velocity=velocity,
                     category=category, attribute=attribute)
    return GroundTruthBox(base, instance_id)


def det(x, score, y=0.0, category="car", yaw=0.0, size=(2.0, 4.5, 1.7),
        velocity=(1.0, 0.0), attribute="vehicle.moving"):
    base = BoxRecord("s", (x, y, 1.0), size, yaw, velocity=velocity,
                     category=category, attribute=attribute)
    return DetectionBox(base, score)


def pair(pred: DetectionBox, truth: GroundTruthBox) -> Match:
    ms = match_greedy([truth], [pred], MatchMetric(CENTER_DISTANCE, 10.0))
    assert len(ms.matches) == 1
    return ms.matches[0]


CD2 = MatchMetric(CENTER_DISTANCE, 2.0)


class TestTpChannels:
    def test_full_set_for_ordinary_category(self):
        assert tp_channels("car") == ("ate", "ase", "aoe", "ave", "aae")

    def test_traffic_cone_keeps_only_shape_terms(self):
        assert tp_channels("traffic_cone") == ("ate", "ase")

    def test_barrier_keeps_orientation(self):
        assert tp_channels("barrier") == ("ate", "ase", "aoe")


class TestPerMatchErrors:
    def test_identical_pair_is_all_zero(self):
        m = pair(det(0.0, 0.9), gt(0.0))
        errors = per_match_errors(m)
        assert errors == {"ate": 0.0, "ase": 0.0, "aoe": 0.0, "ave": 0.0, "aae": 0.0}

    def test_translation_error_is_planar(self):
        truth = gt(0.0)
        base = det(3.0, 0.9, y=4.0).base
        shifted = DetectionBox(
            BoxRecord(base.sample_id, (3.0, 4.0, 50.0), base.size, base.yaw,
                      velocity=base.velocity, category=base.category,
                      attribute=base.attribute), 0.9)
        assert per_match_errors(pair(shifted, truth))["ate"] == pytest.approx(5.0)

    def test_scale_error_from_volume_overlap(self):
        m = pair(det(0.0, 0.9, size=(4.0, 9.0, 3.4)), gt(0.0))
        assert per_match_errors(m)["ase"] == pytest.approx(1.0 - 1.0 / 8.0)

    def test_orientation_flip_costs_pi_for_cars(self):
        m = pair(det(0.0, 0.9, yaw=math.pi), gt(0.0, yaw=0.0))
        assert per_match_errors(m)["aoe"] == pytest.approx(math.pi)

    def test_orientation_flip_is_free_for_barriers(self):
        m = pair(det(0.0, 0.9, category="barrier", yaw=math.pi),
                 gt(0.0, category="barrier", yaw=0.0))
        errors = per_match_errors(m)
        assert errors["aoe"] == pytest.approx(0.0, abs=1e-12)
        assert "ave" not in errors and "aae" not in errors

    def test_cone_has_no_orientation_channel(self):
        m = pair(det(0.0, 0.9, category="traffic_cone", yaw=1.0),
                 gt(0.0, category="traffic_cone", yaw=0.0))
        assert set(per_match_errors(m)) == {"ate", "ase"}

    def test_attribute_error_is_binary(self):
        m = pair(det(0.0, 0.9, attribute="vehicle.parked"), gt(0.0))
        assert per_match_errors(m)["aae"] == 1.0

    def test_missing_velocity_yields_none(self):
        m = pair(det(0.0, 0.9, velocity=None), gt(0.0))
        assert per_match_errors(m)["ave"] is None


class TestCalcAp:
    def curve(self, gts, preds):
        return pr_curve([match_greedy(gts, preds, CD2)])

    def test_perfect_detector_is_exactly_one(self):
        gts = [gt(5.0 * i, instance_id=f"g{i}") for i in range(5)]
        preds = [det(5.0 * i, 1.0 - 0.01 * i) for i in range(5)]
        assert calc_ap(self.curve(gts, preds), 0.1, 0.1) == 1.0

    def test_two_gt_one_hit_is_forty_ninetieths(self):
        gts = [gt(0.0, instance_id="a"), gt(50.0, instance_id="b")]
        preds = [det(0.1, 0.9)]
        ap = calc_ap(self.curve(gts, preds), 0.1, 0.1)
        assert abs(ap - 40.0 / 90.0) < 1e-9

    def test_recall_below_floor_scores_zero(self):
        # 11 GT, one hit: max recall 1/11 < 0.1
        gts = [gt(10.0 * i, instance_id=f"g{i}") for i in range(11)]
        preds = [det(0.1, 0.9)]
        assert calc_ap(self.curve(gts, preds), 0.1, 0.1) == 0.0

    def test_precision_below_floor_scores_zero(self):
        # each hit arrives after many FPs: precision never exceeds 0.1
        gts = [gt(100.0 * i, instance_id=f"g{i}") for i in range(2)]
        preds = [det(100.0 * i, 0.99 - 0.001 * (20 * i + j))
                 for i in range(2) for j in range(1)]
        fps = [det(5000.0 + 3.0 * k, 0.999) for k in range(40)]
        ap = calc_ap(self.curve(gts, preds + fps), 0.1, 0.1)
        assert ap == 0.0

    def test_ap_decreases_with_added_fps(self):
        gts = [gt(10.0 * i, instance_id=f"g{i}") for i in range(4)]
        preds = [det(10.0 * i, 0.9 - 0.1 * i) for i in range(4)]
        clean = calc_ap(self.curve(gts, preds), 0.1, 0.1)
        noisy = calc_ap(self.curve(gts, preds + [det(500.0, 0.95)]), 0.1, 0.1)
        assert noisy < clean

    def test_score_rescaling_is_invisible(self):
        # any strictly increasing score transform leaves the curve alone
        gts = [gt(10.0 * i, instance_id=f"g{i}") for i in range(4)]
        preds = [det(10.0 * i, 0.9 - 0.2 * i) for i in range(3)]
        preds.append(det(500.0, 0.85))
        rescaled = [DetectionBox(p.base, p.score / 2.0 + 0.05) for p in preds]
        a = calc_ap(self.curve(gts, preds), 0.1, 0.1)
        b = calc_ap(self.curve(gts, rescaled), 0.1, 0.1)
        assert a == b


class TestCalcTpMetric:
    def series(self, values, achieved):
        grid = np.linspace(0.0, 1.0, 101)
        return TPSeries(grid, np.asarray(values, dtype=float),
                        np.asarray(achieved, dtype=bool))

    def test_constant_series(self):
        s = self.series(np.full(101, 0.37), np.ones(101))
        assert calc_tp_metric(s, 0.1) == pytest.approx(0.37)

    def test_floor_points_are_excluded(self):
        values = np.zeros(101)
        values[:11] = 99.0  # r <= 0.1 must not contaminate the mean
        values[11:] = 0.5
        s = self.series(values, np.ones(101))
        assert calc_tp_metric(s, 0.1) == pytest.approx(0.5)

    def test_unachieved_points_are_excluded(self):
        values = np.zeros(101)
        values[11:31] = 0.25
        achieved = np.zeros(101, dtype=bool)
        achieved[:31] = True
        s = self.series(values, achieved)
        assert calc_tp_metric(s, 0.1) == pytest.approx(0.25)

    def test_curve_stuck_below_floor_scores_one(self):
        achieved = np.zeros(101, dtype=bool)
        achieved[:10] = True
        s = self.series(np.zeros(101), achieved)
        assert calc_tp_metric(s, 0.1) == 1.0


class TestAggregate:
    def test_mean_ap_over_all_cells(self):
        ap = {("car", 0.5): 0.2, ("car", 1.0): 0.4,
              ("bus", 0.5): 0.6, ("bus", 1.0): 0.8}
        m = aggregate(ap, {}, EvalConfig())
        assert m.mean_ap == pytest.approx(0.5)

    def test_none_channels_excluded_from_means(self):
        ap = {("car", 2.0): 0.5, ("traffic_cone", 2.0): 0.5}
        tp = {("car", "ate"): 0.3, ("traffic_cone", "ate"): 0.5,
              ("car", "ave"): 0.4, ("traffic_cone", "ave"): None}
        m = aggregate(ap, tp, EvalConfig())
        assert m.mtp["ate"] == pytest.approx(0.4)
        assert m.mtp["ave"] == pytest.approx(0.4)  # only the car contributes

    def test_composite_score_formula(self):
        ap = {("car", 2.0): 0.6}
        tp = {("car", "ate"): 0.5, ("car", "ase"): 0.2, ("car", "aoe"): 0.85,
              ("car", "ave"): 0.3, ("car", "aae"): 0.1}
        m = aggregate(ap, tp, EvalConfig())
        expect = (5 * 0.6 + (1 - 0.5) + (1 - 0.2) + (1 - 0.85)
                  + (1 - 0.3) + (1 - 0.1)) / 10.0
        assert m.nds == pytest.approx(expect)

    def test_errors_above_one_are_clamped(self):
        ap = {("car", 2.0): 0.0}
        tp = {("car", "ave"): 1.55}
        m = aggregate(ap, tp, EvalConfig())
        assert m.nds == 0.0  # 1 - min(1, 1.55) contributes nothing
        worse = aggregate(ap, {("car", "ave"): 7.0}, EvalConfig())
        assert worse.nds == m.nds

    def test_missing_channels_contribute_nothing(self):
        # only cones evaluated: no aoe/ave/aae means anywhere
        ap = {("traffic_cone", 2.0): 1.0}
        tp = {("traffic_cone", "ate"): 0.0, ("traffic_cone", "ase"): 0.0,
              ("traffic_cone", "aoe"): None, ("traffic_cone", "ave"): None,
              ("traffic_cone", "aae"): None}
        m = aggregate(ap, tp, EvalConfig())
        assert m.nds == pytest.approx(0.7)  # (5 + 1 + 1) / 10

    def test_empty_table_raises(self):
        with pytest.raises(ValueError):
            aggregate({}, {}, EvalConfig())


class TestEvaluateDetection:
    def perfect_world(self, n=6):
        gts = {"s": [gt(6.0 * i, instance_id=f"g{i}") for i in range(n)]}
        preds = {"s": [det(6.0 * i, 0.9) for i in range(n)]}
        return gts, preds

    def test_perfect_submission(self):
        gts, preds = self.perfect_world()
        m = evaluate_detection(gts, preds, EvalConfig())
        assert m.mean_ap == 1.0
        assert m.nds == 1.0
        assert all(v == 0.0 for v in m.mtp.values())

    def test_empty_predictions_scores_zero(self):
        gts, _ = self.perfect_world()
        m = evaluate_detection(gts, {"s": []}, EvalConfig())
        assert m.mean_ap == 0.0
        assert m.nds == 0.0
        assert all(v == 1.0 for v in m.mtp.values())

    def test_categories_come_from_ground_truth(self):
        gts = {"s": [gt(0.0, instance_id="g0"),
                     gt(20.0, category="bus", instance_id="g1")]}
        preds = {"s": [det(0.0, 0.9),
                       det(40.0, 0.8, category="pedestrian")]}  # no ped GT
        m = evaluate_detection(gts, preds, EvalConfig())
        cats = {c for c, _ in m.ap}
        assert cats == {"car", "bus"}

    def test_cone_velocity_never_scores(self):
        gts = {"s": [gt(0.0, category="traffic_cone", instance_id="g0",
                        velocity=(0.0, 0.0))]}
        base = {"s": [det(0.0, 0.9, category="traffic_cone", velocity=(0.0, 0.0))]}
        wild = {"s": [det(0.0, 0.9, category="traffic_cone", velocity=(99.0, -99.0))]}
        ma = evaluate_detection(gts, base, EvalConfig())
        mb = evaluate_detection(gts, wild, EvalConfig())
        assert ma.nds == mb.nds
        assert ma.tp_errors[("traffic_cone", "ave")] is None

    def test_worker_count_does_not_change_results(self):
        gts = {"s": [gt(6.0 * i, instance_id=f"g{i}",
                        category=c) for i, c in enumerate(
                            ("car", "car", "bus", "pedestrian", "truck"))]}
        preds = {"s": [det(6.0 * i + 0.3, 0.9 - 0.05 * i, category=c)
                       for i, c in enumerate(
                           ("car", "car", "bus", "pedestrian", "truck"))]}
        a = evaluate_detection(gts, preds, EvalConfig(), workers=1)
        b = evaluate_detection(gts, preds, EvalConfig(), workers=4)
        assert a == b

    def test_iou_matcher_uses_single_conventional_threshold(self):
        gts, preds = self.perfect_world()
        m = evaluate_detection(gts, preds, EvalConfig(), matcher_kind=IOU_BEV)
        assert set(m.ap) == {("car", 0.7)}
        assert m.ap[("car", 0.7)] == 1.0


class TestMatchingStudy:
    def test_row_grid(self):
        gts = {"s": [gt(0.0, instance_id="g0"),
                     gt(20.0, category="bus", instance_id="g1")]}
        preds = {"s": [det(0.2, 0.9), det(20.2, 0.8, category="bus")]}
        rows = matching_study(gts, preds, EvalConfig())
        # per category: one row per distance threshold plus one IOU row
        assert len(rows) == 2 * (4 + 1)
        cars = [r for r in rows if r.category == "car"]
        assert [r.threshold for r in cars] == [0.5, 1.0, 2.0, 4.0, 0.7]
        assert cars[-1].matcher == "iou_3d"

    def test_iou_kind_is_selectable(self):
        gts = {"s": [gt(0.0, instance_id="g0")]}
        preds = {"s": [det(0.0, 0.9)]}
        rows = matching_study(gts, preds, EvalConfig(), iou_kind=IOU_BEV)
        assert rows[-1].matcher == "iou_bev"
        assert rows[-1].ap == 1.0
