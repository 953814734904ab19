"""Scoring protocol tests.

The production sweep is compared against a literal reference that, at
each threshold, re-filters, re-suppresses, and re-matches from scratch.
"""

import random

import numpy as np
import pytest

from overtile.errors import (EmptyCurveError, MixedClassError,
                             ValidationError)
from overtile.evaluate import (EvalConfig, PRPoint, average_precision,
                               evaluate_detections, f1_score,
                               match_detections, mean_ap, pr_curve,
                               pr_curve_summed, throughput)
from overtile.stitcher import global_nms

from .conftest import det, gt


def naive_iou(a, b):
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = (a.xmax - a.xmin) * (a.ymax - a.ymin) + \
            (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter
    return inter / union if union > 0 else 0.0


def naive_match(dets, gts, thresh):
    """Greedy matching written with plain loops."""
    order = sorted(dets, key=lambda d: (-d.confidence, d.box))
    taken = [False] * len(gts)
    tp = 0
    for d in order:
        best, best_v = -1, 0.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = naive_iou(d.box, g.box)
            if v > best_v:
                best, best_v = j, v
        if best >= 0 and best_v >= thresh:
            taken[best] = True
            tp += 1
    return tp, len(dets) - tp, len(gts) - tp


def naive_pr_sweep(dets, gts, cfg, iou_thresh):
    """The protocol executed literally, one threshold at a time."""
    points = []
    for t in cfg.thresholds:
        kept = [d for d in dets if d.confidence >= t]
        kept = global_nms(kept, cfg.nms_iou)
        tp, fp, fn = naive_match(kept, gts, iou_thresh)
        points.append((t, tp, fp, fn))
    return points


class TestMatchDetections:
    def test_perfect_detections(self):
        gts = [gt(0, 10 * i, 0, 10 * i + 8, 8) for i in range(1, 6)]
        dets = [det(0, *g.box.astuple(), 1.0) for g in gts]
        result = match_detections(dets, gts, 0.5)
        assert (result.tp, result.fp, result.fn) == (5, 0, 0)

    def test_detection_without_gt_is_fp(self):
        result = match_detections([det(0, 0, 0, 5, 5, 0.9)], [], 0.5)
        assert (result.tp, result.fp, result.fn) == (0, 1, 0)

    def test_two_detections_one_gt(self):
        g = gt(0, 0, 0, 10, 10)
        strong = det(0, 0, 0, 10, 10, 0.9)
        weak = det(0, 1, 1, 10, 10, 0.8)
        result = match_detections([weak, strong], [g], 0.5)
        assert (result.tp, result.fp, result.fn) == (1, 1, 0)
        # the stronger detection claimed the object
        assert result.pairs == ((1, 0),)

    def test_counts_always_reconcile(self):
        rng = random.Random(1)
        gts = [gt(0, x, y, x + 10, y + 10)
               for x, y in ((rng.uniform(0, 90), rng.uniform(0, 90))
                            for _ in range(25))]
        dets = [det(0, x, y, x + 10, y + 10, rng.random())
                for x, y in ((rng.uniform(0, 90), rng.uniform(0, 90))
                             for _ in range(40))]
        result = match_detections(dets, gts, 0.25)
        assert result.tp + result.fn == len(gts)
        assert result.tp + result.fp == len(dets)

    def test_matches_naive_reference(self):
        rng = random.Random(7)
        for _ in range(10):
            gts = [gt(0, x, y, x + 8, y + 8)
                   for x, y in ((rng.uniform(0, 80), rng.uniform(0, 80))
                                for _ in range(rng.randrange(1, 15)))]
            dets = [det(0, x, y, x + 8, y + 8, rng.random())
                    for x, y in ((rng.uniform(0, 80), rng.uniform(0, 80))
                                 for _ in range(rng.randrange(1, 20)))]
            assert match_detections(dets, gts, 0.25)[:3] == \
                naive_match(dets, gts, 0.25)

    def test_rejects_mixed_classes(self):
        with pytest.raises(MixedClassError):
            match_detections([det(0, 0, 0, 1, 1, 0.5)],
                             [gt(1, 0, 0, 1, 1)], 0.5)

    def test_greedy_equals_unique_overlap_optimum(self):
        # disjoint objects, one candidate each: greedy must match them all
        gts = [gt(0, 20 * i, 0, 20 * i + 8, 8) for i in range(10)]
        dets = [det(0, 20 * i + 1, 1, 20 * i + 8, 8, 0.1 + 0.05 * i)
                for i in range(10)]
        result = match_detections(dets, gts, 0.25)
        assert result.tp == 10


class TestPrCurve:
    def test_noiseless_scene_all_ones(self, car_table):
        gts = [gt(0, 10 * i, 0, 10 * i + 8, 8) for i in range(1, 30)]
        dets = [det(0, *g.box.astuple(), 1.0) for g in gts]
        curve = pr_curve(dets, gts, 0, EvalConfig(), iou_thresh=0.25)
        assert all(p.precision == 1.0 and p.recall == 1.0 for p in curve)

    def test_zero_detections_degenerate(self):
        gts = [gt(0, 0, 0, 8, 8)]
        curve = pr_curve([], gts, 0, EvalConfig())
        assert all(p.precision == 1.0 and p.recall == 0.0 for p in curve)

    def test_recall_non_increasing_in_threshold(self):
        rng = random.Random(13)
        gts = [gt(0, x, y, x + 10, y + 10)
               for x, y in ((rng.uniform(0, 490), rng.uniform(0, 490))
                            for _ in range(60))]
        dets = [det(0, *g.box.astuple(), rng.random()) for g in gts]
        for _ in range(30):
            x, y = rng.uniform(0, 490), rng.uniform(0, 490)
            dets.append(det(0, x, y, x + 10, y + 10, rng.random()))
        curve = pr_curve(dets, gts, 0, EvalConfig(), iou_thresh=0.25)
        recalls = [p.recall for p in curve]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))

    def test_matches_literal_protocol_reference(self):
        rng = random.Random(23)
        for trial in range(5):
            gts = [gt(0, x, y, x + 10, y + 10)
                   for x, y in ((rng.uniform(0, 200), rng.uniform(0, 200))
                                for _ in range(20))]
            dets = []
            for g in gts:
                if rng.random() < 0.8:
                    dets.append(det(0, *g.box.astuple(),
                                    round(rng.random(), 3)))
            for _ in range(15):
                x, y = rng.uniform(0, 200), rng.uniform(0, 200)
                dets.append(det(0, x, y, x + 10, y + 10,
                                round(rng.random(), 3)))
            cfg = EvalConfig()
            got = pr_curve(dets, gts, 0, cfg, iou_thresh=0.25)
            want = naive_pr_sweep(dets, gts, cfg, 0.25)
            assert [(p.threshold, p.tp, p.fp, p.fn) for p in got] == want

    def test_invariant_to_detection_order(self):
        rng = random.Random(31)
        gts = [gt(0, 15 * i, 0, 15 * i + 10, 10) for i in range(20)]
        dets = [det(0, *g.box.astuple(), round(rng.random(), 2)) for g in gts]
        cfg = EvalConfig()
        base = pr_curve(dets, gts, 0, cfg, iou_thresh=0.25)
        shuffled = dets[:]
        rng.shuffle(shuffled)
        assert pr_curve(shuffled, gts, 0, cfg, iou_thresh=0.25) == base

    def test_counts_summed_across_images(self):
        g1 = [gt(0, 0, 0, 10, 10)]
        g2 = [gt(0, 0, 0, 10, 10), gt(0, 30, 30, 40, 40)]
        d1 = [det(0, 0, 0, 10, 10, 1.0)]
        d2 = [det(0, 0, 0, 10, 10, 1.0)]
        curve = pr_curve_summed([(d1, g1), (d2, g2)], 0, EvalConfig())
        assert curve[0].tp == 2 and curve[0].fn == 1


class TestAveragePrecision:
    def test_perfect_curve(self):
        curve = [PRPoint(t, 10, 0, 0) for t in (0.1, 0.5, 0.9)]
        assert average_precision(curve) == 1.0

    def test_zero_recall(self):
        curve = [PRPoint(t, 0, 0, 10) for t in (0.1, 0.5, 0.9)]
        assert average_precision(curve) == 0.0

    def test_two_point_envelope(self):
        # (recall 0.5, precision 1.0) and (recall 1.0, precision 0.5)
        curve = [PRPoint(0.7, 5, 0, 5), PRPoint(0.1, 10, 10, 0)]
        assert average_precision(curve) == pytest.approx(0.75)

    def test_envelope_is_monotone(self):
        # a precision dip at intermediate recall is lifted by the envelope
        curve = [PRPoint(0.9, 2, 0, 8),    # r 0.2, p 1.0
                 PRPoint(0.5, 5, 5, 5),    # r 0.5, p 0.5
                 PRPoint(0.1, 8, 2, 2)]    # r 0.8, p 0.8
        # envelope: p(r<=0.8) from max of points at recall >= r
        want = 0.2 * 1.0 + 0.3 * 0.8 + 0.3 * 0.8
        assert average_precision(curve) == pytest.approx(want)

    def test_bounds(self):
        rng = random.Random(3)
        for _ in range(50):
            curve = [PRPoint(rng.random(), rng.randrange(10),
                             rng.randrange(10), rng.randrange(10))
                     for _ in range(8)]
            assert 0.0 <= average_precision(curve) <= 1.0

    def test_empty_curve_rejected(self):
        with pytest.raises(EmptyCurveError):
            average_precision([])


class TestMeanAp:
    def test_single_class(self):
        assert mean_ap({0: 0.68}) == pytest.approx(0.68)

    def test_two_extremes(self):
        assert mean_ap({0: 1.0, 1: 0.0}) == 0.5

    def test_three_values(self):
        assert mean_ap({0: 0.2, 1: 0.4, 2: 0.6}) == pytest.approx(0.4)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            mean_ap({})


class TestF1:
    def test_perfect(self):
        assert f1_score(10, 0, 0) == 1.0

    def test_all_wrong(self):
        assert f1_score(0, 5, 5) == 0.0

    def test_balanced(self):
        assert f1_score(3, 1, 1) == pytest.approx(0.75)

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            f1_score(-1, 0, 0)


class TestThroughput:
    def test_rate(self):
        rate, _ = throughput(4.4, 10.0, 10.0)
        assert rate == pytest.approx(0.44)

    def test_no_overhead(self):
        _, overhead = throughput(1.0, 5.0, 5.0)
        assert overhead == 1.0

    def test_overhead_band(self):
        _, overhead = throughput(1.0, 10.0, 16.0)
        assert overhead == pytest.approx(1.6)
        assert 1.5 <= overhead <= 1.75

    def test_rejects_nonpositive_times(self):
        with pytest.raises(ValidationError):
            throughput(1.0, 0.0, 1.0)


class TestEvalConfig:
    def test_default_threshold_grid(self):
        cfg = EvalConfig()
        assert len(cfg.thresholds) == 30
        assert cfg.thresholds[0] == pytest.approx(0.05)
        assert cfg.thresholds[-1] == pytest.approx(0.95)
        gaps = np.diff(cfg.thresholds)
        assert float(np.max(gaps) - np.min(gaps)) < 1e-12

    def test_default_ious(self):
        cfg = EvalConfig()
        assert cfg.iou_default == 0.5
        assert cfg.iou_small_object == 0.25

    def test_small_object_routing(self, car_table):
        cfg = EvalConfig()
        assert cfg.iou_for(car_table, 0) == 0.25

    def test_rejects_unsorted_thresholds(self):
        with pytest.raises(ValidationError):
            EvalConfig(thresholds=(0.5, 0.4))


class TestEvaluateDetections:
    def test_noiseless_report(self, car_table):
        gts = [gt(0, 12 * i, 0, 12 * i + 10, 10) for i in range(10)]
        dets = [det(0, *g.box.astuple(), 1.0) for g in gts]
        report = evaluate_detections([(dets, gts)], car_table)
        assert report.map_score == 1.0
        assert report.ap == {0: 1.0}
        assert report.f1 == {0: 1.0}

    def test_throughput_attached(self, car_table):
        gts = [gt(0, 0, 0, 10, 10)]
        dets = [det(0, 0, 0, 10, 10, 1.0)]
        report = evaluate_detections([(dets, gts)], car_table,
                                     area_km2=2.25, detector_seconds=10.0,
                                     wall_seconds=15.0)
        assert report.throughput_km2_per_s == pytest.approx(0.225)
        assert report.overhead_factor == pytest.approx(1.5)

    def test_only_gt_classes_scored(self, multi_table):
        gts = [gt(2, 0, 0, 10, 10)]
        dets = [det(2, 0, 0, 10, 10, 1.0), det(0, 50, 50, 60, 60, 0.9)]
        report = evaluate_detections([(dets, gts)], multi_table)
        assert set(report.ap) == {2}

    def test_rejects_empty_gt(self, car_table):
        with pytest.raises(ValidationError):
            evaluate_detections([([], [])], car_table)
