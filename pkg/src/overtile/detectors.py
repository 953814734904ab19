"""Per-tile detectors: the contract plus three implementations.

* A ground-truth oracle with a configurable noise model, for analytic
  end-to-end tests (known recall, tunable false-positive rate).
* A prediction-grid simulator reproducing the cell-capacity coarseness
  of single-shot detectors: objects whose centroids share a grid cell
  compete for a fixed number of slots.
* An adapter that shells out to an external detector program over a tile
  manifest, for attaching real models.

Detectors are deterministic for a fixed seed: randomness is re-seeded
per tile from (seed, parent, row, col), so results do not depend on the
order or concurrency of tile processing.
"""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .core import (BoundingBox, ClassTable, Detection, Frame,
                   GroundTruthLabel, clamp_box)
from .errors import (ProcessFailureError, UnknownCutoutError, ValidationError)
from .imageio import parse_detection_row
from .tiler import ManifestEntry, TileRecord, read_manifest

logger = logging.getLogger(__name__)

# An object belongs to a tile when at least this fraction of its area
# falls inside the tile rectangle; its box is clipped to the tile.
TRUNCATION_AREA_FRAC = 0.5


class Detector(Protocol):
    """Contract every per-tile detector implements."""

    identifier: str

    def detect(self, tile: TileRecord, classes: ClassTable
               ) -> list[Detection]:
        """Return tile-local detections for one cutout."""
        ...


def clip_gt_to_tile(tile: TileRecord, gt: list[GroundTruthLabel],
                    min_area_frac: float = TRUNCATION_AREA_FRAC
                    ) -> list[GroundTruthLabel]:
    """Ground truth visible in a tile, clipped and in tile-local coords.

    An object counts as present when >= ``min_area_frac`` of its area
    lies inside the tile rectangle.  Output is sorted canonically so
    downstream randomness is independent of input order.
    """
    tile_box = BoundingBox(tile.col, tile.row,
                           tile.col + tile.width, tile.row + tile.height)
    survivors = []
    for label in gt:
        area = label.box.area
        if area <= 0:
            continue
        inter = label.box.intersection_area(tile_box)
        if inter / area >= min_area_frac:
            clipped = BoundingBox(max(label.box.xmin, tile_box.xmin),
                                  max(label.box.ymin, tile_box.ymin),
                                  min(label.box.xmax, tile_box.xmax),
                                  min(label.box.ymax, tile_box.ymax))
            local = clipped.translate(-tile.col, -tile.row)
            survivors.append(GroundTruthLabel(label.class_id, local))
    survivors.sort(key=lambda lab: (lab.class_id, lab.box))
    return survivors


def _tile_rng(seed: int, tile: TileRecord) -> np.random.Generator:
    parent_hash = zlib.crc32(tile.parent_name.encode("utf-8"))
    return np.random.default_rng([seed, parent_hash, tile.row, tile.col])


@dataclass(frozen=True)
class OracleNoiseModel:
    """Noise injected by the ground-truth oracle.

    ``dropout_prob`` is the per-object miss rate, ``fp_rate`` the
    expected number of false positives per tile (Poisson), and
    ``jitter_px`` the maximum uniform perturbation of each box edge.
    True and false positives draw confidences from separate uniform
    ranges so threshold sweeps separate the two populations.
    """

    dropout_prob: float = 0.0
    fp_rate: float = 0.0
    jitter_px: float = 0.0
    tp_confidence: tuple[float, float] = (0.7, 1.0)
    fp_confidence: tuple[float, float] = (0.05, 0.7)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValidationError(f"dropout_prob out of range: {self.dropout_prob}")
        if self.fp_rate < 0:
            raise ValidationError(f"fp_rate must be >= 0: {self.fp_rate}")
        if self.jitter_px < 0:
            raise ValidationError(f"jitter_px must be >= 0: {self.jitter_px}")
        for lo, hi in (self.tp_confidence, self.fp_confidence):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValidationError(
                    f"confidence range must satisfy 0 <= lo <= hi <= 1: "
                    f"({lo}, {hi})")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "OracleNoiseModel":
        """No dropout, no false positives, no jitter, confidence 1.0."""
        return cls(dropout_prob=0.0, fp_rate=0.0, jitter_px=0.0,
                   tp_confidence=(1.0, 1.0), seed=seed)


def oracle_detect(tile: TileRecord, gt: list[GroundTruthLabel],
                  noise: OracleNoiseModel,
                  classes: ClassTable | None = None) -> list[Detection]:
    """Detect by reading ground truth, then apply the noise model.

    ``gt`` is in the global frame of the tile's parent.  False-positive
    boxes are uniform in position with sizes drawn from the ground-truth
    size distribution (10 px square when no sizes are available).
    """
    rng = _tile_rng(noise.seed, tile)
    locals_ = clip_gt_to_tile(tile, gt)

    detections: list[Detection] = []
    n = len(locals_)
    keep = rng.random(n) >= noise.dropout_prob
    jitter = rng.uniform(-noise.jitter_px, noise.jitter_px, size=(n, 4)) \
        if noise.jitter_px > 0 else np.zeros((n, 4))
    tp_lo, tp_hi = noise.tp_confidence
    confs = rng.uniform(tp_lo, tp_hi, size=n) if tp_hi > tp_lo \
        else np.full(n, tp_lo)
    for i, label in enumerate(locals_):
        if not keep[i]:
            continue
        b = label.box
        xs = sorted((b.xmin + jitter[i, 0], b.xmax + jitter[i, 2]))
        ys = sorted((b.ymin + jitter[i, 1], b.ymax + jitter[i, 3]))
        box = clamp_box(BoundingBox(xs[0], ys[0], xs[1], ys[1]),
                        tile.width, tile.height)
        detections.append(Detection(label.class_id, box, float(confs[i]),
                                    Frame.TILE_LOCAL, tile_id=tile.tile_id))

    if noise.fp_rate > 0:
        sizes = [(lab.box.width, lab.box.height) for lab in gt
                 if lab.box.area > 0] or [(10.0, 10.0)]
        class_ids = sorted({lab.class_id for lab in gt}) or \
            (list(range(len(classes))) if classes else [0])
        n_fp = int(rng.poisson(noise.fp_rate))
        fp_lo, fp_hi = noise.fp_confidence
        for _ in range(n_fp):
            w, h = sizes[int(rng.integers(len(sizes)))]
            w, h = min(w, tile.width), min(h, tile.height)
            cx = rng.uniform(w / 2, tile.width - w / 2) \
                if tile.width > w else tile.width / 2
            cy = rng.uniform(h / 2, tile.height - h / 2) \
                if tile.height > h else tile.height / 2
            box = clamp_box(BoundingBox(cx - w / 2, cy - h / 2,
                                        cx + w / 2, cy + h / 2),
                            tile.width, tile.height)
            cid = class_ids[int(rng.integers(len(class_ids)))]
            conf = float(rng.uniform(fp_lo, fp_hi)) if fp_hi > fp_lo else fp_lo
            detections.append(Detection(cid, box, conf, Frame.TILE_LOCAL,
                                        tile_id=tile.tile_id))
    return detections


@dataclass(frozen=True)
class OracleDetector:
    """Detector binding for :func:`oracle_detect` over a fixed scene."""

    gt: tuple[GroundTruthLabel, ...]
    noise: OracleNoiseModel
    identifier: str = "oracle"

    def detect(self, tile: TileRecord, classes: ClassTable
               ) -> list[Detection]:
        return oracle_detect(tile, list(self.gt), self.noise, classes)


@dataclass(frozen=True)
class GridSimConfig:
    """Prediction-grid geometry: downsample factor and per-cell capacity."""

    downsample: int = 32
    boxes_per_cell: int = 5

    def __post_init__(self):
        if self.downsample < 1:
            raise ValidationError(f"downsample must be >= 1: {self.downsample}")
        if self.boxes_per_cell < 1:
            raise ValidationError(
                f"boxes_per_cell must be >= 1: {self.boxes_per_cell}")


def grid_dims(window: int, downsample: int) -> tuple[int, int]:
    """Prediction-grid dimensions for a square input window."""
    if window < 1 or downsample < 1:
        raise ValidationError(
            f"window and downsample must be >= 1: {window}, {downsample}")
    g = math.ceil(window / downsample)
    return (g, g)


def nf_layer_size(n_boxes: int, n_classes: int) -> int:
    """Output-layer size of a single-shot detector head:
    n_boxes * (n_classes + 5)."""
    if n_boxes < 1 or n_classes < 0:
        raise ValidationError(
            f"need n_boxes >= 1 and n_classes >= 0: {n_boxes}, {n_classes}")
    return n_boxes * (n_classes + 5)


def gridsim_detect(tile: TileRecord, gt: list[GroundTruthLabel],
                   cfg: GridSimConfig) -> list[Detection]:
    """Simulate grid coarseness: objects sharing a cell compete for slots.

    Each visible object is assigned to the cell containing its centroid;
    a cell emits at most ``boxes_per_cell`` detections, keeping the
    largest objects (ties broken by centroid position).  Survivors keep
    their true boxes with confidence 1.0, so any recall loss is purely
    the grid-capacity effect.
    """
    locals_ = clip_gt_to_tile(tile, gt)
    cells: dict[tuple[int, int], list[GroundTruthLabel]] = {}
    d = cfg.downsample
    for label in locals_:
        cx, cy = label.box.center
        cells.setdefault((int(cy // d), int(cx // d)), []).append(label)

    detections = []
    for key in sorted(cells):
        members = sorted(cells[key],
                         key=lambda lab: (-lab.box.area, lab.box.center[1],
                                          lab.box.center[0], lab.box))
        for label in members[:cfg.boxes_per_cell]:
            detections.append(Detection(label.class_id, label.box, 1.0,
                                        Frame.TILE_LOCAL,
                                        tile_id=tile.tile_id))
    detections.sort(key=lambda det: (det.class_id, det.box))
    return detections


@dataclass(frozen=True)
class GridSimDetector:
    """Detector binding for :func:`gridsim_detect` over a fixed scene."""

    gt: tuple[GroundTruthLabel, ...]
    cfg: GridSimConfig
    identifier: str = "gridsim"

    def detect(self, tile: TileRecord, classes: ClassTable
               ) -> list[Detection]:
        return gridsim_detect(tile, list(self.gt), self.cfg)


def external_detect(manifest_path: str | Path, workdir: str | Path,
                    command_template: str, classes: ClassTable
                    ) -> dict[str, list[Detection]]:
    """Run an external detector program once over a tile manifest.

    The template must contain ``{manifest}`` and ``{output}`` (and may
    use ``{workdir}``); the program reads the manifest plus the cutout
    images next to it and writes one line per detection:
    ``cutout_name, class_name, xmin, ymin, xmax, ymax, confidence``
    in tile-local pixel coordinates.  Boxes are clipped to their tile
    and out-of-range confidences are clamped with a warning.
    """
    # absolute paths: the child runs with cwd=workdir, so relative inputs
    # from a config file would not resolve
    manifest_path = Path(manifest_path).absolute()
    workdir = Path(workdir).absolute()
    for placeholder in ("{manifest}", "{output}"):
        if placeholder not in command_template:
            raise ValidationError(
                f"command template lacks the {placeholder} placeholder: "
                f"{command_template!r}")
    entries = read_manifest(manifest_path)
    by_name: dict[str, ManifestEntry] = {e.cutout_name: e for e in entries}
    output_path = workdir / "external_detections.csv"

    command = command_template.format(manifest=str(manifest_path),
                                      workdir=str(workdir),
                                      output=str(output_path))
    argv = shlex.split(command)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True,
                              cwd=str(workdir))
    except OSError as exc:
        raise ProcessFailureError(
            f"cannot launch external detector {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise ProcessFailureError(
            f"external detector exited with code {proc.returncode}; "
            f"stderr: {proc.stderr.strip()[:2000]}",
            returncode=proc.returncode, stderr=proc.stderr)
    if not output_path.exists():
        raise ProcessFailureError(
            f"external detector wrote no output file: {output_path}")

    per_tile: dict[str, list[Detection]] = {name: [] for name in by_name}
    for lineno, line in enumerate(
            output_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cutout, class_id, box, conf = parse_detection_row(
            line, classes, str(output_path), lineno)
        entry = by_name.get(cutout)
        if entry is None:
            raise UnknownCutoutError(
                f"{output_path}:{lineno}: cutout not in manifest: {cutout!r}")
        box = clamp_box(box, entry.width, entry.height)
        per_tile[cutout].append(Detection(class_id, box, conf,
                                          Frame.TILE_LOCAL, tile_id=cutout))
    return per_tile

