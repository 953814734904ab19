"""overtile: windowed object detection over large overhead imagery.

Partition arbitrarily large images into overlapping cutouts, run a
pluggable detector per cutout, remap detections to global coordinates,
merge duplicates with class-wise non-maximal suppression (optionally
across a multiscale detector ensemble), and score the result with a
precision-recall / AP / mAP protocol plus km^2/s throughput accounting.
"""

from .core import (BoundingBox, ClassDef, ClassTable, Detection, Frame,
                   GroundTruthLabel, RasterImage, box_area_m2, clamp_box,
                   iou)
from .detectors import (GridSimConfig, GridSimDetector, OracleDetector,
                        OracleNoiseModel, external_detect, grid_dims,
                        gridsim_detect, nf_layer_size, oracle_detect)
from .evaluate import (EvalConfig, EvalReport, PRPoint, average_precision,
                       evaluate_detections, f1_score, match_detections,
                       mean_ap, pr_curve, throughput)
from .multiscale import (EnsembleConfig, ScaleProfile, chip_count_ratio,
                         effective_gsd, resample_for_profile, run_ensemble,
                         simulate_2x)
from .stitcher import GlobalDetectionSet, global_nms, globalize, stitch
from .tiler import (TileRecord, TileSpec, cutout_name, extract_tiles,
                    parse_cutout_name, plan_tiles)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ClassDef", "ClassTable", "Detection", "Frame",
    "GroundTruthLabel", "RasterImage", "box_area_m2", "clamp_box", "iou",
    "GridSimConfig", "GridSimDetector", "OracleDetector", "OracleNoiseModel",
    "external_detect", "grid_dims", "gridsim_detect", "nf_layer_size",
    "oracle_detect",
    "EvalConfig", "EvalReport", "PRPoint", "average_precision",
    "evaluate_detections", "f1_score", "match_detections", "mean_ap",
    "pr_curve", "throughput",
    "EnsembleConfig", "ScaleProfile", "chip_count_ratio", "effective_gsd",
    "resample_for_profile", "run_ensemble", "simulate_2x",
    "GlobalDetectionSet", "global_nms", "globalize", "stitch",
    "TileRecord", "TileSpec", "cutout_name", "extract_tiles",
    "parse_cutout_name", "plan_tiles",
]
