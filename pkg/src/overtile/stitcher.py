"""Remap tile-local detections to global coordinates and merge overlaps.

Tile overlap guarantees full coverage but also duplicates objects that
straddle cutout boundaries; the merge is a class-wise greedy non-maximal
suppression over the gathered global detections.  All outputs are
order-canonicalized so stitching is independent of tile processing
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, Detection, Frame
from .errors import FrameMismatchError, MixedParentError, ValidationError
from .tiler import TileRecord

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class GlobalDetectionSet:
    """Merged detections for one parent image, with per-detection
    provenance (the tile, and optionally the scale profile, it came from)."""

    parent_name: str
    detections: tuple[Detection, ...]
    provenance: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.provenance and len(self.provenance) != len(self.detections):
            raise ValidationError("provenance must align with detections")
        for det in self.detections:
            if det.frame is not Frame.GLOBAL:
                raise FrameMismatchError(
                    "global detection set requires Global-frame detections")

    def __len__(self) -> int:
        return len(self.detections)


def globalize(dets: list[Detection], tile: TileRecord) -> list[Detection]:
    """Translate tile-local detections into the parent image frame.

    Boxes shift by (+col, +row) and are clamped to the tile's rectangle
    in parent coordinates, which lies within the parent bounds by the
    tile invariants.
    """
    out = []
    tile_right = tile.col + tile.width
    tile_bottom = tile.row + tile.height
    for det in dets:
        if det.frame is not Frame.TILE_LOCAL:
            raise FrameMismatchError(
                f"expected tile-local detection, got {det.frame}")
        b = det.box.translate(tile.col, tile.row)
        b = BoundingBox(min(max(b.xmin, tile.col), tile_right),
                        min(max(b.ymin, tile.row), tile_bottom),
                        min(max(b.xmax, tile.col), tile_right),
                        min(max(b.ymax, tile.row), tile_bottom))
        out.append(Detection(det.class_id, b, det.confidence, Frame.GLOBAL))
    return out


def nms_keep_indices(dets: list[Detection], nms_iou: float) -> list[int]:
    """Indices of detections surviving class-wise greedy suppression.

    Within a class, detections are visited by descending confidence
    (ties broken by box coordinates); a detection is suppressed when its
    IoU with an already-kept box strictly exceeds ``nms_iou``.  Returned
    indices are in canonical (class, -confidence, box) order.
    """
    if not 0.0 < nms_iou <= 1.0:
        raise ValidationError(f"nms_iou must lie in (0, 1]: {nms_iou}")
    for det in dets:
        if det.frame is not Frame.GLOBAL:
            raise FrameMismatchError("nms expects Global-frame detections")

    order = sorted(range(len(dets)), key=lambda i: dets[i].sort_key())
    kept: list[int] = []
    coords = np.array([dets[i].box.astuple() for i in order], dtype=float) \
        if order else np.empty((0, 4))
    areas = (coords[:, 2] - coords[:, 0]) * (coords[:, 3] - coords[:, 1]) \
        if order else np.empty(0)
    classes = np.array([dets[i].class_id for i in order], dtype=int) \
        if order else np.empty(0, dtype=int)

    kept_pos: list[int] = []  # positions within `order`
    for pos in range(len(order)):
        if kept_pos:
            prev = np.array(kept_pos)
            same = classes[prev] == classes[pos]
            if same.any():
                cand = prev[same]
                ix1 = np.maximum(coords[cand, 0], coords[pos, 0])
                iy1 = np.maximum(coords[cand, 1], coords[pos, 1])
                ix2 = np.minimum(coords[cand, 2], coords[pos, 2])
                iy2 = np.minimum(coords[cand, 3], coords[pos, 3])
                iw = np.maximum(ix2 - ix1, 0.0)
                ih = np.maximum(iy2 - iy1, 0.0)
                inter = iw * ih
                union = areas[cand] + areas[pos] - inter
                with np.errstate(invalid="ignore", divide="ignore"):
                    ious = np.where(union > 0, inter / union, 0.0)
                if (ious > nms_iou).any():
                    continue
        kept_pos.append(pos)
        kept.append(order[pos])
    return kept


def global_nms(dets: list[Detection], nms_iou: float = DEFAULT_NMS_IOU
               ) -> list[Detection]:
    """Class-wise greedy non-maximal suppression over global detections."""
    return [dets[i] for i in nms_keep_indices(dets, nms_iou)]


def stitch(per_tile: list[tuple[TileRecord, list[Detection]]],
           nms_iou: float = DEFAULT_NMS_IOU) -> GlobalDetectionSet:
    """Globalize per-tile detections, concatenate, and suppress overlaps.

    The result is identical (as a sorted multiset with provenance) under
    any permutation of the per-tile input.
    """
    if not per_tile:
        raise ValidationError("stitch requires at least one tile")
    parents = {tile.parent_name for tile, _ in per_tile}
    if len(parents) != 1:
        raise MixedParentError(
            f"tiles come from multiple parents: {sorted(parents)}")
    parent_name = parents.pop()

    gathered: list[tuple[Detection, str]] = []
    for tile, dets in per_tile:
        for det in globalize(dets, tile):
            gathered.append((det, tile.tile_id))
    # Canonical pre-suppression order; provenance breaks exact ties so the
    # survivor set is permutation-independent even for identical boxes.
    gathered.sort(key=lambda pair: (pair[0].sort_key(), pair[1]))

    dets = [d for d, _ in gathered]
    keep = nms_keep_indices(dets, nms_iou)
    return GlobalDetectionSet(parent_name,
                              tuple(dets[i] for i in keep),
                              tuple(gathered[i][1] for i in keep))
