"""Core geometry and domain types shared by every pipeline stage.

Coordinate conventions used throughout the package: origin at the
top-left of the image, x grows rightward, y grows downward.  Boxes are
axis-aligned, real-valued half-open intervals measured in pixels.  All
types here are immutable value objects and safe to share between
concurrent workers.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


class Frame(enum.Enum):
    """Coordinate frame a detection box is expressed in."""

    TILE_LOCAL = "tile_local"
    GLOBAL = "global"


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box; ordering is lexicographic on (xmin, ymin, xmax, ymax).

    The lexicographic ordering doubles as the deterministic tie-break key
    for equal-confidence detections, which is what makes suppression and
    stitching results independent of input order.
    """

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValidationError(
                f"box coordinates out of order: ({self.xmin}, {self.ymin}, "
                f"{self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.xmin + dx, self.ymin + dy,
                           self.xmax + dx, self.ymax + dy)

    def scale(self, sx: float, sy: float) -> "BoundingBox":
        """Scale about the origin; factors must be positive."""
        if sx <= 0 or sy <= 0:
            raise ValidationError(f"scale factors must be positive: {sx}, {sy}")
        return BoundingBox(self.xmin * sx, self.ymin * sy,
                           self.xmax * sx, self.ymax * sy)

    def intersection_area(self, other: "BoundingBox") -> float:
        iw = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        ih = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        if iw <= 0 or ih <= 0:
            return 0.0
        return iw * ih

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Degenerate pairs (union area zero) score 0 rather than dividing by
    zero, so zero-area predictions count as misses downstream.
    """
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clamp_box(box: BoundingBox, width: float, height: float) -> BoundingBox:
    """Clip a box to the rectangle [0, width] x [0, height]."""
    if width < 1 or height < 1:
        raise ValidationError(f"clamp extent must be >= 1: {width}x{height}")

    def clip(v: float, hi: float) -> float:
        return min(max(v, 0.0), hi)

    return BoundingBox(clip(box.xmin, width), clip(box.ymin, height),
                       clip(box.xmax, width), clip(box.ymax, height))


def box_area_m2(box: BoundingBox, gsd: float) -> float:
    """Ground area of a box in square meters, given meters-per-pixel."""
    if gsd <= 0:
        raise ValidationError(f"gsd must be positive: {gsd}")
    return box.area * gsd * gsd


def clamp_confidence(value: float) -> float:
    """Clamp a confidence into [0, 1], warning when the input was outside.

    External detectors occasionally emit values slightly outside the unit
    interval; clamping keeps downstream thresholding total.
    """
    if 0.0 <= value <= 1.0:
        return value
    clamped = min(max(value, 0.0), 1.0)
    logger.warning("confidence %s outside [0, 1]; clamped to %s", value, clamped)
    return clamped


@dataclass(frozen=True)
class Detection:
    """One detected object: class, box, confidence, and coordinate frame.

    Tile-local detections must name their tile; global detections carry
    provenance separately (see the stitching stage).
    """

    class_id: int
    box: BoundingBox
    confidence: float
    frame: Frame
    tile_id: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(
                f"confidence must lie in [0, 1]: {self.confidence}")
        if self.frame is Frame.TILE_LOCAL and not self.tile_id:
            raise ValidationError("tile-local detection requires a tile_id")

    def with_box(self, box: BoundingBox) -> "Detection":
        return Detection(self.class_id, box, self.confidence,
                         self.frame, self.tile_id)

    def sort_key(self) -> tuple:
        """Canonical ordering: class, confidence descending, then box."""
        return (self.class_id, -self.confidence, self.box)


@dataclass(frozen=True)
class GroundTruthLabel:
    """A labeled object in the global frame of its parent image."""

    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    small_object: bool = False


@dataclass(frozen=True)
class ClassTable:
    """Ordered class registry; ids dense from 0, names unique.

    The ``small_object`` flag routes a class to the relaxed IoU matching
    threshold during evaluation.
    """

    classes: tuple[ClassDef, ...]

    def __post_init__(self):
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ValidationError(f"class ids must be dense from 0: {ids}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValidationError(f"class names must be unique: {names}")

    @classmethod
    def from_names(cls, names, small: set[str] | frozenset[str] = frozenset()
                   ) -> "ClassTable":
        unknown_small = set(small) - set(names)
        if unknown_small:
            raise ValidationError(
                f"small-object flags for unknown classes: {sorted(unknown_small)}")
        return cls(tuple(ClassDef(i, n, n in small)
                         for i, n in enumerate(names)))

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.class_id
        raise ValidationError(f"unknown class name: {name!r}")

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.classes):
            raise ValidationError(f"unknown class id: {class_id}")
        return self.classes[class_id].name

    def is_small(self, class_id: int) -> bool:
        if not 0 <= class_id < len(self.classes):
            raise ValidationError(f"unknown class id: {class_id}")
        return self.classes[class_id].small_object

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Pixel grid plus ground-sample-distance metadata.

    Pixels are stored row-major as a read-only uint8 array of shape
    (height, width, bands) with bands in {1, 3}.  ``gsd`` is the physical
    ground size of one pixel in meters.
    """

    name: str
    pixels: np.ndarray
    gsd: float

    def __post_init__(self):
        px = self.pixels
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
            object.__setattr__(self, "pixels", px)
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValidationError(
                f"pixels must have shape (h, w, bands) with bands in {{1, 3}}: "
                f"{px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError(f"image extent must be >= 1: {px.shape}")
        if px.dtype != np.uint8:
            raise ValidationError(f"pixels must be uint8, got {px.dtype}")
        if self.gsd <= 0:
            raise ValidationError(f"gsd must be positive: {self.gsd}")
        px.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def bands(self) -> int:
        return self.pixels.shape[2]

    @property
    def area_km2(self) -> float:
        """Ground footprint in square kilometers."""
        return self.width * self.height * self.gsd * self.gsd / 1e6

    def with_pixels(self, pixels: np.ndarray, name: str | None = None,
                    gsd: float | None = None) -> "RasterImage":
        return RasterImage(name if name is not None else self.name,
                           pixels,
                           gsd if gsd is not None else self.gsd)
