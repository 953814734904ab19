"""Sliding-window partitioning of large images into overlapping cutouts.

A tiling is fully described by the square window size and the overlap
fraction between adjacent windows.  Offsets march in fixed strides and
the final tile on each axis is clamped so it abuts the image edge, which
guarantees every pixel is covered without synthesizing padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import RasterImage
from .errors import MalformedNameError, ValidationError

DEFAULT_WINDOW = 416
DEFAULT_OVERLAP = 0.15

NAME_DELIMITER = "|"


@dataclass(frozen=True)
class TileSpec:
    """Square sliding-window geometry: side length and overlap fraction."""

    window: int = DEFAULT_WINDOW
    overlap_frac: float = DEFAULT_OVERLAP

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"window must be >= 1: {self.window}")
        if not 0.0 <= self.overlap_frac < 1.0:
            raise ValidationError(
                f"overlap_frac must lie in [0, 1): {self.overlap_frac}")
        if self.stride < 1:
            raise ValidationError(
                f"overlap_frac {self.overlap_frac} leaves zero stride for "
                f"window {self.window}")

    @property
    def stride(self) -> int:
        # floor keeps the realized overlap within one pixel of the request
        return math.floor(self.window * (1.0 - self.overlap_frac))


@dataclass(frozen=True)
class TileRecord:
    """One cutout bound to its offset in the parent image.

    ``pixels`` may be None for manifest-only records used by stages that
    need tile geometry but not image content (e.g. stitching).
    """

    parent_name: str
    row: int
    col: int
    height: int
    width: int
    pixels: np.ndarray | None = None

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise ValidationError(
                f"tile offsets must be non-negative: ({self.row}, {self.col})")
        if self.height < 1 or self.width < 1:
            raise ValidationError(
                f"tile extent must be >= 1: {self.height}x{self.width}")
        if self.pixels is not None:
            shape = self.pixels.shape[:2]
            if shape != (self.height, self.width):
                raise ValidationError(
                    f"tile buffer shape {shape} does not match declared "
                    f"extent {self.height}x{self.width}")

    @property
    def tile_id(self) -> str:
        return f"{self.parent_name}{NAME_DELIMITER}{self.row}_{self.col}_" \
               f"{self.height}_{self.width}"

    def name(self, ext: str) -> str:
        return cutout_name(self.parent_name, self.row, self.col,
                           self.height, self.width, ext)


class ParsedCutoutName(NamedTuple):
    parent: str
    row: int
    col: int
    height: int
    width: int
    ext: str


def _axis_offsets(extent: int, window: int, stride: int) -> list[int]:
    """Offsets along one axis: 0, stride, 2*stride, ... with the final
    offset clamped to max(0, extent - window)."""
    offsets: list[int] = []
    k = 0
    while True:
        pos = k * stride
        if pos + window >= extent:
            offsets.append(max(0, extent - window))
            return offsets
        offsets.append(pos)
        k += 1


def plan_tiles(image_w: int, image_h: int, spec: TileSpec
               ) -> list[tuple[int, int]]:
    """Plan (row, col) offsets covering an image, in row-major order.

    Every pixel is covered by at least one window; images smaller than
    the window yield the single offset (0, 0).
    """
    if image_w < 1 or image_h < 1:
        raise ValidationError(f"image extent must be >= 1: {image_w}x{image_h}")
    rows = _axis_offsets(image_h, spec.window, spec.stride)
    cols = _axis_offsets(image_w, spec.window, spec.stride)
    return [(r, c) for r in rows for c in cols]


def cutout_name(parent: str, row: int, col: int, h: int, w: int,
                ext: str) -> str:
    """Compose the cutout file name ``parent|row_col_h_w.ext``."""
    if NAME_DELIMITER in parent:
        raise MalformedNameError(
            f"parent name may not contain {NAME_DELIMITER!r}: {parent!r}")
    if not parent:
        raise MalformedNameError("parent name may not be empty")
    if not ext or NAME_DELIMITER in ext:
        raise MalformedNameError(f"invalid extension: {ext!r}")
    for field, value in (("row", row), ("col", col),
                         ("height", h), ("width", w)):
        if not isinstance(value, (int, np.integer)) or value < 0:
            raise MalformedNameError(
                f"{field} must be a non-negative integer: {value!r}")
    return f"{parent}{NAME_DELIMITER}{row}_{col}_{h}_{w}.{ext}"


def parse_cutout_name(name: str) -> ParsedCutoutName:
    """Invert :func:`cutout_name`; raises naming the offending field."""
    if name.count(NAME_DELIMITER) != 1:
        raise MalformedNameError(
            f"expected exactly one {NAME_DELIMITER!r} delimiter: {name!r}")
    parent, suffix = name.split(NAME_DELIMITER)
    if not parent:
        raise MalformedNameError(f"empty parent name: {name!r}")
    stem, dot, ext = suffix.partition(".")
    if not dot or not ext:
        raise MalformedNameError(f"missing extension: {name!r}")
    fields = stem.split("_")
    if len(fields) != 4:
        raise MalformedNameError(
            f"expected row_col_h_w, got {len(fields)} fields: {stem!r}")
    values = []
    for label, raw in zip(("row", "col", "height", "width"), fields):
        try:
            value = int(raw)
        except ValueError:
            raise MalformedNameError(
                f"{label} field is not an integer: {raw!r}") from None
        if value < 0:
            raise MalformedNameError(f"{label} field is negative: {raw!r}")
        values.append(value)
    return ParsedCutoutName(parent, values[0], values[1], values[2],
                            values[3], ext)


def extract_tiles(image: RasterImage, spec: TileSpec) -> list[TileRecord]:
    """Cut an image into tiles per :func:`plan_tiles`.

    Buffers are verbatim copies of the parent region; order is the
    deterministic row-major offset order.
    """
    window = spec.window
    records = []
    for row, col in plan_tiles(image.width, image.height, spec):
        h = min(window, image.height)
        w = min(window, image.width)
        buf = image.pixels[row:row + h, col:col + w].copy()
        records.append(TileRecord(image.name, row, col, h, w, buf))
    return records


# Manifest: one record per line, tab-separated, UTF-8.
MANIFEST_FIELDS = ("cutout_name", "parent_name", "row", "col", "h", "w")


class ManifestEntry(NamedTuple):
    cutout_name: str
    parent_name: str
    row: int
    col: int
    height: int
    width: int


def write_manifest(path: str | Path, records: list[TileRecord],
                   ext: str = "png") -> None:
    lines = []
    for rec in records:
        lines.append("\t".join((rec.name(ext), rec.parent_name, str(rec.row),
                                str(rec.col), str(rec.height), str(rec.width))))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise MalformedNameError(
                f"{path}:{lineno}: expected 6 tab-separated fields, "
                f"got {len(parts)}")
        name, parent, *nums = parts
        try:
            row, col, h, w = (int(v) for v in nums)
        except ValueError:
            raise MalformedNameError(
                f"{path}:{lineno}: non-integer tile geometry: {nums}") from None
        entries.append(ManifestEntry(name, parent, row, col, h, w))
    return entries
