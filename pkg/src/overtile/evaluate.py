"""Scoring: IoU matching, threshold sweeps, AP/mAP, F1, and throughput.

The protocol: at each of 30 evenly spaced confidence thresholds between
0.05 and 0.95, discard detections below the threshold, apply class-wise
non-maximal suppression to the remainder, then tabulate true/false
positives and false negatives summed over all test images.  A detection
matches ground truth when their IoU meets the class threshold (0.5 by
default, 0.25 for small-object classes); each ground-truth box may be
claimed at most once, by the highest-confidence detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import ClassTable, Detection, GroundTruthLabel
from .errors import EmptyCurveError, MixedClassError, ValidationError
from .stitcher import global_nms

N_THRESHOLDS = 30
THRESHOLD_MIN = 0.05
THRESHOLD_MAX = 0.95
IOU_DEFAULT = 0.5
IOU_SMALL_OBJECT = 0.25


def default_thresholds(n: int = N_THRESHOLDS, lo: float = THRESHOLD_MIN,
                       hi: float = THRESHOLD_MAX) -> tuple[float, ...]:
    return tuple(float(t) for t in np.linspace(lo, hi, n))


@dataclass(frozen=True)
class EvalConfig:
    """Matching thresholds and the confidence sweep grid."""

    iou_default: float = IOU_DEFAULT
    iou_small_object: float = IOU_SMALL_OBJECT
    thresholds: tuple[float, ...] = field(default_factory=default_thresholds)
    nms_iou: float = 0.5

    def __post_init__(self):
        if not self.thresholds:
            raise ValidationError("thresholds may not be empty")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValidationError("thresholds must be strictly increasing")
        for name, v in (("iou_default", self.iou_default),
                        ("iou_small_object", self.iou_small_object)):
            if not 0.0 < v <= 1.0:
                raise ValidationError(f"{name} must lie in (0, 1]: {v}")

    def iou_for(self, classes: ClassTable, class_id: int) -> float:
        return self.iou_small_object if classes.is_small(class_id) \
            else self.iou_default


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 1.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 1.0


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...]  # (detection index, gt index)


def _greedy_match_order(dets: Sequence[Detection],
                        gts: Sequence[GroundTruthLabel],
                        iou_thresh: float) -> tuple[list[int], list[int]]:
    """Shared greedy core: detection visit order and, per visited
    detection, the claimed gt index (or -1)."""
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, dets[i].box))
    claims = []
    if not gts:
        return order, [-1] * len(order)
    g = np.array([gt.box.astuple() for gt in gts], dtype=float)
    g_area = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    available = np.ones(len(gts), dtype=bool)
    for di in order:
        b = dets[di].box
        iw = np.minimum(g[:, 2], b.xmax) - np.maximum(g[:, 0], b.xmin)
        ih = np.minimum(g[:, 3], b.ymax) - np.maximum(g[:, 1], b.ymin)
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        union = g_area + b.area - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            ious = np.where(union > 0, inter / union, 0.0)
        ious[~available] = -1.0
        j = int(np.argmax(ious))  # ties resolve to the lowest gt index
        if available[j] and ious[j] >= iou_thresh:
            available[j] = False
            claims.append(j)
        else:
            claims.append(-1)
    return order, claims


def match_detections(dets: Sequence[Detection],
                     gts: Sequence[GroundTruthLabel],
                     iou_thresh: float) -> MatchResult:
    """Greedy single-class matching by descending confidence.

    Each detection claims the unmatched ground-truth box with the
    highest IoU, provided that IoU >= ``iou_thresh``; every ground-truth
    box is claimed at most once.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValidationError(f"iou_thresh must lie in (0, 1]: {iou_thresh}")
    class_ids = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(class_ids) > 1:
        raise MixedClassError(
            f"match_detections is single-class; got {sorted(class_ids)}")

    order, claims = _greedy_match_order(dets, gts, iou_thresh)
    pairs = tuple((di, j) for di, j in zip(order, claims) if j >= 0)
    tp = len(pairs)
    return MatchResult(tp, len(dets) - tp, len(gts) - tp, pairs)


ImageSample = tuple[Sequence[Detection], Sequence[GroundTruthLabel]]


def pr_curve_summed(samples: Sequence[ImageSample], class_id: int,
                    cfg: EvalConfig, iou_thresh: float | None = None
                    ) -> list[PRPoint]:
    """Sweep thresholds; counts are summed over all image samples.

    Per image and threshold the protocol is: keep detections of the
    class with confidence >= threshold, apply NMS, then match against
    that image's ground truth of the class.  Because both greedy NMS and
    greedy matching decide each detection using only higher-confidence
    detections, filtering at a threshold and re-running is identical to
    running once on everything and counting matches above the threshold;
    we exploit that so the sweep costs one NMS and one matching pass per
    image.
    """
    if iou_thresh is None:
        iou_thresh = cfg.iou_default
    # Per image: (confidence, matched) per surviving detection, gt count.
    image_stats = []
    for dets, gts in samples:
        cdets = [d for d in dets if d.class_id == class_id]
        cgts = [g for g in gts if g.class_id == class_id]
        surviving = global_nms(cdets, cfg.nms_iou)
        order, claims = _greedy_match_order(surviving, cgts, iou_thresh)
        confs = np.array([surviving[di].confidence for di in order])
        matched = np.array([j >= 0 for j in claims], dtype=bool)
        image_stats.append((confs, matched, len(cgts)))

    points = []
    for t in cfg.thresholds:
        tp = fp = fn = 0
        for confs, matched, n_gt in image_stats:
            above = confs >= t
            img_tp = int(np.count_nonzero(above & matched))
            tp += img_tp
            fp += int(np.count_nonzero(above & ~matched))
            fn += n_gt - img_tp
        points.append(PRPoint(float(t), tp, fp, fn))
    return points


def pr_curve(dets: Sequence[Detection], gts: Sequence[GroundTruthLabel],
             class_id: int, cfg: EvalConfig,
             iou_thresh: float | None = None) -> list[PRPoint]:
    """Single-image convenience wrapper around :func:`pr_curve_summed`."""
    return pr_curve_summed([(dets, gts)], class_id, cfg, iou_thresh)


def average_precision(curve: Sequence[PRPoint]) -> float:
    """Area under the monotone precision envelope of a PR curve.

    Points are sorted by recall; the precision at recall r is the
    maximum precision attained at any recall >= r, and the area is the
    sum of envelope precision times recall increments, anchored at
    recall zero.
    """
    if not curve:
        raise EmptyCurveError("cannot integrate an empty PR curve")
    pts = sorted(((p.recall, p.precision) for p in curve))
    ap = 0.0
    prev_r = 0.0
    for i, (r, _) in enumerate(pts):
        envelope = max(p for _, p in pts[i:])
        ap += (r - prev_r) * envelope
        prev_r = r
    return ap


def mean_ap(per_class: dict[int, float]) -> float:
    if not per_class:
        raise ValidationError("mean_ap requires at least one class")
    return sum(per_class.values()) / len(per_class)


def f1_score(tp: int, fp: int, fn: int) -> float:
    if min(tp, fp, fn) < 0:
        raise ValidationError(f"counts must be >= 0: {(tp, fp, fn)}")
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def throughput(area_km2: float, detector_seconds: float,
               wall_seconds: float) -> tuple[float, float]:
    """Inference rate in km^2/s plus the pre/post-processing overhead
    factor (wall time over detector-only time)."""
    if detector_seconds <= 0 or wall_seconds <= 0:
        raise ValidationError(
            f"times must be positive: detector={detector_seconds}, "
            f"wall={wall_seconds}")
    return area_km2 / detector_seconds, wall_seconds / detector_seconds


@dataclass(frozen=True)
class EvalReport:
    """Per-class curves and scores plus optional throughput accounting."""

    curves: dict[int, tuple[PRPoint, ...]]
    ap: dict[int, float]
    map_score: float
    f1: dict[int, float]
    best_threshold: dict[int, float]
    throughput_km2_per_s: float | None = None
    overhead_factor: float | None = None


def evaluate_detections(samples: Sequence[ImageSample], classes: ClassTable,
                        cfg: EvalConfig | None = None,
                        area_km2: float | None = None,
                        detector_seconds: float | None = None,
                        wall_seconds: float | None = None) -> EvalReport:
    """Full scoring over one or more (detections, ground truth) samples.

    Only classes present in the ground truth are scored; mAP is their
    arithmetic mean.  F1 is reported at each class's best threshold.
    """
    if cfg is None:
        cfg = EvalConfig()
    gt_class_ids = sorted({g.class_id for _, gts in samples for g in gts})
    if not gt_class_ids:
        raise ValidationError("no ground-truth objects to evaluate against")

    curves: dict[int, tuple[PRPoint, ...]] = {}
    ap: dict[int, float] = {}
    f1: dict[int, float] = {}
    best_threshold: dict[int, float] = {}
    for cid in gt_class_ids:
        curve = pr_curve_summed(samples, cid, cfg,
                                cfg.iou_for(classes, cid))
        curves[cid] = tuple(curve)
        ap[cid] = average_precision(curve)
        best = max(curve, key=lambda p: (f1_score(p.tp, p.fp, p.fn),
                                         -p.threshold))
        f1[cid] = f1_score(best.tp, best.fp, best.fn)
        best_threshold[cid] = best.threshold

    rate = overhead = None
    if area_km2 is not None and detector_seconds and wall_seconds:
        rate, overhead = throughput(area_km2, detector_seconds, wall_seconds)
    return EvalReport(curves, ap, mean_ap(ap), f1, best_threshold,
                      rate, overhead)


def write_report_csv(path: str | Path, report: EvalReport,
                     classes: ClassTable) -> None:
    """Machine-readable report: per-threshold rows then summary rows."""
    lines = []
    for cid, curve in sorted(report.curves.items()):
        name = classes.name_of(cid)
        for p in curve:
            lines.append(f"{name},{p.threshold:.6f},{p.tp},{p.fp},{p.fn},"
                         f"{p.precision:.6f},{p.recall:.6f}")
    for cid, value in sorted(report.ap.items()):
        lines.append(f"{classes.name_of(cid)},AP,{value:.6f}")
    lines.append(f"ALL,mAP,{report.map_score:.6f}")
    if report.throughput_km2_per_s is not None:
        lines.append(f"ALL,km2_per_s,{report.throughput_km2_per_s:.6f}")
        lines.append(f"ALL,overhead_factor,{report.overhead_factor:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pr_columns(out_dir: str | Path, report: EvalReport,
                     classes: ClassTable) -> list[Path]:
    """Columnar PR-curve files (threshold, recall, precision) per class,
    plotting-tool friendly."""
    out_dir = Path(out_dir)
    written = []
    for cid, curve in sorted(report.curves.items()):
        path = out_dir / f"pr_{classes.name_of(cid)}.dat"
        rows = ["# threshold recall precision"]
        rows += [f"{p.threshold:.6f} {p.recall:.6f} {p.precision:.6f}"
                 for p in curve]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
    return written


def format_report_text(report: EvalReport, classes: ClassTable) -> str:
    lines = [f"{'class':<12} {'AP':>8} {'F1*':>8} {'thresh*':>8}"]
    for cid in sorted(report.ap):
        lines.append(f"{classes.name_of(cid):<12} {report.ap[cid]:>8.4f} "
                     f"{report.f1[cid]:>8.4f} "
                     f"{report.best_threshold[cid]:>8.2f}")
    lines.append(f"{'mAP':<12} {report.map_score:>8.4f}")
    if report.throughput_km2_per_s is not None:
        lines.append(f"throughput   {report.throughput_km2_per_s:.4f} km^2/s "
                     f"(overhead x{report.overhead_factor:.2f})")
    return "\n".join(lines)
