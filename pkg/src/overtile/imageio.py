"""Raster and label file I/O.

Images are 8-bit PNG (1 or 3 bands) accompanied by a JSON sidecar
``<stem>.json`` carrying ``{"name": ..., "gsd_m": ...}``; PNG has no
standard slot for ground sample distance.  Labels and detections travel
as small comma-separated text files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (BoundingBox, ClassTable, Detection, Frame,
                   GroundTruthLabel, RasterImage, clamp_confidence)
from .errors import (DetectionParseError, ImageIOError, MissingGsdError,
                     ValidationError)


def sidecar_path(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".json")


def save_raster(image: RasterImage, path: str | Path,
                write_sidecar: bool = True) -> None:
    path = Path(path)
    arr = image.pixels
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc
    if write_sidecar:
        sidecar_path(path).write_text(
            json.dumps({"name": image.name, "gsd_m": image.gsd}) + "\n",
            encoding="utf-8")


def load_raster(path: str | Path, gsd: float | None = None,
                name: str | None = None) -> RasterImage:
    """Load a PNG raster; gsd comes from the sidecar unless given."""
    path = Path(path)
    try:
        pil = Image.open(path)
        pil.load()
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB" if pil.mode in ("RGBA", "P", "CMYK") else "L")
    arr = np.asarray(pil, dtype=np.uint8)
    if gsd is None or name is None:
        side = sidecar_path(path)
        if not side.exists():
            if gsd is None:
                raise MissingGsdError(
                    f"no gsd given and sidecar missing: {side}")
            meta = {}
        else:
            try:
                meta = json.loads(side.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise MissingGsdError(f"unreadable sidecar {side}: {exc}") from exc
        if gsd is None:
            if "gsd_m" not in meta:
                raise MissingGsdError(f"sidecar {side} lacks gsd_m")
            gsd = float(meta["gsd_m"])
        if name is None:
            name = str(meta.get("name", path.stem))
    return RasterImage(name, arr, gsd)


def _parse_float(raw: str, label: str, path: str, lineno: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DetectionParseError(f"{label} is not a number: {raw!r}",
                                  str(path), lineno) from None


def write_gt_csv(path: str | Path, labels: list[GroundTruthLabel],
                 classes: ClassTable) -> None:
    """Ground-truth file: class_name, xmin, ymin, xmax, ymax per line."""
    lines = []
    for lab in labels:
        b = lab.box
        lines.append(f"{classes.name_of(lab.class_id)},{b.xmin:.6f},"
                     f"{b.ymin:.6f},{b.xmax:.6f},{b.ymax:.6f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_gt_csv(path: str | Path, classes: ClassTable
                ) -> list[GroundTruthLabel]:
    labels = []
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DetectionParseError(
                f"expected 5 fields, got {len(parts)}", str(path), lineno)
        name = parts[0].strip()
        try:
            class_id = classes.id_of(name)
        except ValidationError:
            raise DetectionParseError(f"unknown class name: {name!r}",
                                      str(path), lineno) from None
        coords = [_parse_float(v, lbl, str(path), lineno)
                  for v, lbl in zip(parts[1:], ("xmin", "ymin", "xmax", "ymax"))]
        try:
            box = BoundingBox(*coords)
        except ValidationError as exc:
            raise DetectionParseError(str(exc), str(path), lineno) from None
        labels.append(GroundTruthLabel(class_id, box))
    return labels


def write_local_detections_csv(path: str | Path,
                               per_tile: dict[str, list[Detection]],
                               classes: ClassTable) -> None:
    """Tile-local detections: cutout_name, class_name, coords, confidence."""
    lines = []
    for cutout in sorted(per_tile):
        for det in per_tile[cutout]:
            b = det.box
            lines.append(f"{cutout},{classes.name_of(det.class_id)},"
                         f"{b.xmin:.6f},{b.ymin:.6f},{b.xmax:.6f},"
                         f"{b.ymax:.6f},{det.confidence:.6f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def parse_detection_row(line: str, classes: ClassTable, path: str,
                        lineno: int) -> tuple[str, int, BoundingBox, float]:
    """Parse one ``key, class_name, xmin, ymin, xmax, ymax, confidence`` row.

    The leading key is a cutout name for tile-local files and a parent
    image name for global files.  Out-of-range confidences are clamped
    with a warning; malformed geometry is an error naming the line.
    """
    parts = line.split(",")
    if len(parts) != 7:
        raise DetectionParseError(f"expected 7 fields, got {len(parts)}",
                                  path, lineno)
    key = parts[0].strip()
    name = parts[1].strip()
    try:
        class_id = classes.id_of(name)
    except ValidationError:
        raise DetectionParseError(f"unknown class name: {name!r}",
                                  path, lineno) from None
    coords = [_parse_float(v, lbl, path, lineno)
              for v, lbl in zip(parts[2:6], ("xmin", "ymin", "xmax", "ymax"))]
    try:
        box = BoundingBox(*coords)
    except ValidationError as exc:
        raise DetectionParseError(str(exc), path, lineno) from None
    conf = clamp_confidence(_parse_float(parts[6], "confidence", path, lineno))
    return key, class_id, box, conf


def read_local_detections_csv(path: str | Path, classes: ClassTable
                              ) -> dict[str, list[Detection]]:
    per_tile: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cutout, class_id, box, conf = parse_detection_row(
            line, classes, str(path), lineno)
        det = Detection(class_id, box, conf, Frame.TILE_LOCAL, tile_id=cutout)
        per_tile.setdefault(cutout, []).append(det)
    return per_tile


def write_global_detections_csv(path: str | Path, parent_name: str,
                                detections: list[Detection],
                                classes: ClassTable) -> None:
    """Global detections: parent_name, class_name, coords, confidence."""
    lines = []
    for det in detections:
        b = det.box
        lines.append(f"{parent_name},{classes.name_of(det.class_id)},"
                     f"{b.xmin:.6f},{b.ymin:.6f},{b.xmax:.6f},{b.ymax:.6f},"
                     f"{det.confidence:.6f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_global_detections_csv(path: str | Path, classes: ClassTable
                               ) -> dict[str, list[Detection]]:
    """Read global detections grouped by parent image name."""
    per_parent: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parent, class_id, box, conf = parse_detection_row(
            line, classes, str(path), lineno)
        det = Detection(class_id, box, conf, Frame.GLOBAL)
        per_parent.setdefault(parent, []).append(det)
    return per_parent
