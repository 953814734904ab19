"""Training-data preparation: chip cutting, rotation, HSV jitter, and
resolution degradation.

Rotation covers the full circle so detectors become heading-agnostic;
HSV scaling varies sensor/lighting appearance; Gaussian blur plus 2x
decimation turns high-resolution aerial imagery into the equivalent of
half-resolution satellite imagery.  All transforms are pure functions of
(input, spec) and deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter

from .core import BoundingBox, GroundTruthLabel, RasterImage
from .detectors import clip_gt_to_tile
from .errors import ValidationError
from .tiler import TileSpec, extract_tiles

DEGRADE_SIGMA = 1.0


@dataclass(frozen=True)
class LabeledChip:
    """A training chip and its chip-local labels."""

    image: RasterImage
    labels: tuple[GroundTruthLabel, ...]

    def __post_init__(self):
        for lab in self.labels:
            b = lab.box
            if b.xmin < 0 or b.ymin < 0 or b.xmax > self.image.width \
                    or b.ymax > self.image.height:
                raise ValidationError(
                    f"label box {b.astuple()} outside chip "
                    f"{self.image.width}x{self.image.height}")


@dataclass(frozen=True)
class AugmentSpec:
    """Rotation angle set and multiplicative HSV jitter ranges."""

    rotation_angles: tuple[float, ...] = (0.0, 90.0, 180.0, 270.0)
    hsv_scale_ranges: tuple[tuple[float, float], ...] = (
        (1.0, 1.0), (0.8, 1.2), (0.8, 1.2))
    seed: int = 0

    def __post_init__(self):
        if len(self.hsv_scale_ranges) != 3:
            raise ValidationError("hsv_scale_ranges needs (h, s, v) entries")
        for lo, hi in self.hsv_scale_ranges:
            if lo <= 0 or hi < lo:
                raise ValidationError(
                    f"hsv range must satisfy 0 < lo <= hi: ({lo}, {hi})")


def _rotation_terms(angle_deg: float) -> tuple[float, float]:
    rad = math.radians(angle_deg)
    return math.cos(rad), math.sin(rad)


def rotate_point(x: float, y: float, angle_deg: float, cx: float, cy: float
                 ) -> tuple[float, float]:
    """Rotate a point about (cx, cy); at 90 degrees (x, y) maps to
    (cy + (y - cy), cx - (x - cx)) in this y-down convention."""
    c, s = _rotation_terms(angle_deg)
    dx, dy = x - cx, y - cy
    return cx + c * dx + s * dy, cy - s * dx + c * dy


def rotate_box_hull(box: BoundingBox, angle_deg: float, cx: float, cy: float
                    ) -> BoundingBox:
    """Axis-aligned hull of the four rotated corners (lossless choice)."""
    corners = [(box.xmin, box.ymin), (box.xmax, box.ymin),
               (box.xmin, box.ymax), (box.xmax, box.ymax)]
    pts = [rotate_point(x, y, angle_deg, cx, cy) for x, y in corners]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


def rotate_chip(chip: LabeledChip, angle_deg: float,
                fill_value: int = 0) -> LabeledChip:
    """Rotate a square chip about its center, bilinear, edges filled.

    Label boxes become the clamped hull of their rotated corners; a box
    clamped to zero area (possible only for boxes hugging the border) is
    dropped.  Multiples of 90 degrees are exact pixel permutations.
    """
    img = chip.image
    if img.width != img.height:
        raise ValidationError(
            f"rotation requires a square chip: {img.width}x{img.height}")
    n = img.width
    c, s = _rotation_terms(angle_deg)

    # Index-space rotation center; pixel i sits at coordinate i + 0.5.
    ci = (n - 1) / 2.0
    matrix = np.array([[c, s], [-s, c]])
    offset = np.array([ci - c * ci - s * ci, ci + s * ci - c * ci])
    src = img.pixels.astype(np.float64)
    out = np.empty_like(src)
    for b in range(img.bands):
        out[:, :, b] = affine_transform(src[:, :, b], matrix, offset=offset,
                                        order=1, mode="constant",
                                        cval=float(fill_value))
    rotated = np.clip(np.rint(out), 0, 255).astype(np.uint8)

    center = n / 2.0
    labels = []
    for lab in chip.labels:
        hull = rotate_box_hull(lab.box, angle_deg, center, center)
        clamped = BoundingBox(min(max(hull.xmin, 0.0), float(n)),
                              min(max(hull.ymin, 0.0), float(n)),
                              min(max(hull.xmax, 0.0), float(n)),
                              min(max(hull.ymax, 0.0), float(n)))
        if clamped.area > 0:
            labels.append(GroundTruthLabel(lab.class_id, clamped))
    return LabeledChip(img.with_pixels(rotated), tuple(labels))


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV on float arrays in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.select([maxc == r, maxc == g], [bc - gc, 2.0 + rc - bc],
                  default=4.0 + gc - rc)
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB on float arrays in [0, 1]."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [v, q, p, p, t],
                  default=v)
    g = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [t, v, v, q, p],
                  default=p)
    b = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [p, p, t, v, v],
                  default=q)
    return np.stack([r, g, b], axis=-1)


def hsv_jitter(image: RasterImage, spec: AugmentSpec,
               draw_index: int = 0) -> RasterImage:
    """Multiply H, S, V by seeded random factors inside their ranges.

    ``draw_index`` distinguishes multiple jitters of a batch under one
    seed; identical (seed, draw_index) gives identical output.
    """
    if image.bands != 3:
        raise ValidationError(
            f"hsv jitter requires a 3-band image, got {image.bands} bands")
    rng = np.random.default_rng([spec.seed, draw_index])
    factors = [rng.uniform(lo, hi) if hi > lo else lo
               for lo, hi in spec.hsv_scale_ranges]
    hsv = _rgb_to_hsv(image.pixels.astype(np.float64) / 255.0)
    for ch, factor in enumerate(factors):
        hsv[..., ch] = np.clip(hsv[..., ch] * factor, 0.0, 1.0)
    rgb = np.clip(np.rint(_hsv_to_rgb(hsv) * 255.0), 0, 255).astype(np.uint8)
    return image.with_pixels(rgb)


def degrade_resolution(image: RasterImage,
                       sigma: float = DEGRADE_SIGMA) -> RasterImage:
    """Gaussian blur then 2x decimation by area averaging; gsd doubles.

    Turns e.g. 15 cm aerial imagery into the equivalent of 30 cm
    satellite imagery.
    """
    if image.width < 2 or image.height < 2:
        raise ValidationError(
            f"image too small to degrade: {image.width}x{image.height}")
    src = image.pixels.astype(np.float64)
    blurred = np.empty_like(src)
    for b in range(image.bands):
        blurred[:, :, b] = gaussian_filter(src[:, :, b], sigma=sigma,
                                           mode="reflect")
    h2, w2 = image.height // 2, image.width // 2
    cropped = blurred[:2 * h2, :2 * w2]
    pooled = cropped.reshape(h2, 2, w2, 2, image.bands).mean(axis=(1, 3))
    out = np.clip(np.rint(pooled), 0, 255).astype(np.uint8)
    return RasterImage(image.name, out, image.gsd * 2.0)


def centroid_to_box(cx: float, cy: float, object_m: float,
                    gsd: float) -> BoundingBox:
    """Square box of side object_m/gsd pixels centered on a point label.

    Unclamped; callers clip to image bounds when needed.
    """
    if gsd <= 0 or object_m <= 0:
        raise ValidationError(
            f"gsd and object size must be positive: {gsd}, {object_m}")
    half = object_m / gsd / 2.0
    return BoundingBox(cx - half, cy - half, cx + half, cy + half)


def cut_training_chips(image: RasterImage,
                       labels: list[GroundTruthLabel],
                       chip_window_m: float,
                       empty_chip_frac: float = 0.0,
                       overlap_frac: float = 0.0,
                       seed: int = 0) -> list[LabeledChip]:
    """Cut an image into training chips of a given ground extent.

    The pixel window is chip_window_m / gsd rounded to the nearest
    pixel.  Labels follow the same area-fraction assignment rule as
    detection tiling; chips without labels are kept with probability
    ``empty_chip_frac``.
    """
    window_px = round(chip_window_m / image.gsd)
    if window_px < 1:
        raise ValidationError(
            f"chip window {chip_window_m} m is below one pixel at "
            f"gsd {image.gsd}")
    if not 0.0 <= empty_chip_frac <= 1.0:
        raise ValidationError(
            f"empty_chip_frac must lie in [0, 1]: {empty_chip_frac}")
    rng = np.random.default_rng(seed)
    spec = TileSpec(window=window_px, overlap_frac=overlap_frac)
    chips = []
    for tile in extract_tiles(image, spec):
        local = clip_gt_to_tile(tile, labels)
        keep_empty = rng.random() < empty_chip_frac
        if not local and not keep_empty:
            continue
        chip_image = RasterImage(tile.tile_id, tile.pixels, image.gsd)
        chips.append(LabeledChip(chip_image, tuple(local)))
    return chips


def read_training_list(path: str | Path) -> list[tuple[Path, Path]]:
    """Training list: one ``image_path<TAB>label_path`` pair per line."""
    pairs = []
    base = Path(path).parent
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValidationError(
                f"{path}:{lineno}: expected image<TAB>label, got {line!r}")
        img, lab = (Path(p) for p in parts)
        pairs.append((img if img.is_absolute() else base / img,
                      lab if lab.is_absolute() else base / lab))
    return pairs
