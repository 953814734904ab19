"""Command-line entry point.

Subcommands mirror the pipeline stages so they compose through files:

  synth      render a synthetic scene with exact ground truth
  tile       cut an image into overlapping cutouts plus a manifest
  detect     run a configured detector over tiled cutouts
  stitch     merge tile-local detections into global coordinates
  run        tile -> detect -> stitch -> evaluate in one shot
  evaluate   score a global detection file against ground truth
  augment    rotation / HSV augmentation of training chips
  benchmark  run with stage timing and km^2/s throughput

Every failure exits nonzero with an ``error[family]:`` line on stderr;
the family-to-exit-code mapping is stable (see errors module).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .augment import (AugmentSpec, LabeledChip, hsv_jitter,
                      read_training_list, rotate_chip)
from .core import ClassTable, Detection, Frame, RasterImage
from .errors import OvertileError, ValidationError
from .evaluate import (EvalConfig, default_thresholds, evaluate_detections,
                       format_report_text, write_pr_columns,
                       write_report_csv)
from .imageio import (load_raster, read_global_detections_csv, read_gt_csv,
                      read_local_detections_csv, save_raster, write_gt_csv,
                      write_local_detections_csv)
from .pipeline import (detect_tiles, detector_factory_from_spec,
                       load_pipeline_config, run_pipeline)
from .stitcher import stitch
from .synth import (ObjectPopulation, SceneSpec, render_scene,
                    scene_spec_from_json)
from .tiler import (TileRecord, TileSpec, extract_tiles, read_manifest,
                    write_manifest)


def _parse_class_flag(values: list[str]) -> ClassTable:
    """--class NAME or NAME:small, repeated, in id order."""
    names, small = [], set()
    for v in values:
        name, _, flag = v.partition(":")
        if flag and flag != "small":
            raise ValidationError(f"unknown class flag {flag!r} in {v!r}")
        names.append(name)
        if flag == "small":
            small.add(name)
    return ClassTable.from_names(names, small)


def cmd_tile(args: argparse.Namespace) -> int:
    image = load_raster(args.image, gsd=args.gsd)
    spec = TileSpec(window=args.window_px, overlap_frac=args.overlap)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tiles = extract_tiles(image, spec)
    for tile in tiles:
        save_raster(RasterImage(tile.tile_id, tile.pixels, image.gsd),
                    out_dir / tile.name("png"), write_sidecar=False)
    write_manifest(out_dir / "manifest.tsv", tiles, ext="png")
    print(f"wrote {len(tiles)} cutouts to {out_dir}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config)
    tiles_dir = Path(args.tiles)
    entries = read_manifest(tiles_dir / "manifest.tsv")
    tiles = []
    for e in entries:
        raster = load_raster(tiles_dir / e.cutout_name, gsd=1.0,
                             name=e.cutout_name)
        tiles.append(TileRecord(e.parent_name, e.row, e.col,
                                e.height, e.width, raster.pixels))
    gt = read_gt_csv(cfg.gt_path, cfg.classes) if cfg.gt_path else None
    factory = detector_factory_from_spec(cfg.detector_spec, cfg.seed)
    detector = factory(None, tuple(gt) if gt is not None else None)
    per_tile, detect_s = detect_tiles(tiles, detector, cfg.classes,
                                      args.workers or cfg.workers)
    named = {tile.name("png"): dets
             for tile, dets in zip(tiles, per_tile)}
    write_local_detections_csv(args.out, named, cfg.classes)
    total = sum(len(d) for d in per_tile)
    print(f"{total} detections over {len(tiles)} tiles "
          f"({detect_s:.3f} s detector time) -> {args.out}")
    return 0


def cmd_stitch(args: argparse.Namespace) -> int:
    cfg_classes = _parse_class_flag(args.class_names)
    entries = read_manifest(Path(args.tiles) / "manifest.tsv")
    per_name = read_local_detections_csv(args.detections, cfg_classes)
    per_tile = []
    for e in entries:
        tile = TileRecord(e.parent_name, e.row, e.col, e.height, e.width)
        dets = [Detection(d.class_id, d.box, d.confidence, Frame.TILE_LOCAL,
                          tile_id=tile.tile_id)
                for d in per_name.get(e.cutout_name, [])]
        per_tile.append((tile, dets))
    merged = stitch(per_tile, args.nms_iou)
    from .imageio import write_global_detections_csv
    write_global_detections_csv(args.out, merged.parent_name,
                                list(merged.detections), cfg_classes)
    print(f"{len(merged)} detections after suppression -> {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config)
    if args.workers:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    result = run_pipeline(cfg)
    print(f"{len(result.detections)} detections -> {result.detections_path}")
    if result.report is not None:
        print(format_report_text(result.report, cfg.classes))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.scene:
        spec = scene_spec_from_json(args.scene)
    else:
        populations = (ObjectPopulation(args.class_name, args.count,
                                        args.object_m),) if args.count else ()
        spec = SceneSpec(extent_m=args.extent_m, gsd=args.gsd,
                         populations=populations, bands=args.bands,
                         seed=args.seed, name=args.name)
    image, labels = render_scene(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_path = out_dir / f"{spec.name}.png"
    save_raster(image, image_path)
    gt_path = out_dir / f"{spec.name}_gt.csv"
    write_gt_csv(gt_path, labels, spec.class_table())
    print(f"wrote {image_path} ({image.width}x{image.height} px, "
          f"gsd {image.gsd} m) and {len(labels)} labels -> {gt_path}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    pairs = read_training_list(args.train_list)
    angles = tuple(float(a) for a in args.angles.split(","))

    def parse_range(raw: str) -> tuple[float, float]:
        lo, _, hi = raw.partition(":")
        return (float(lo), float(hi or lo))

    spec = AugmentSpec(rotation_angles=angles,
                       hsv_scale_ranges=(parse_range(args.hsv_h),
                                         parse_range(args.hsv_s),
                                         parse_range(args.hsv_v)),
                       seed=args.seed)
    # Classes are discovered from the label files, in sorted-name order.
    names = set()
    for _, label_path in pairs:
        for line in Path(label_path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                names.add(line.split(",")[0].strip())
    if not names:
        raise ValidationError("training list contains no labels")
    classes = ClassTable.from_names(sorted(names))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    list_lines = []
    draw = 0
    for image_path, label_path in pairs:
        image = load_raster(image_path, gsd=args.gsd, name=image_path.stem)
        chip = LabeledChip(image, tuple(read_gt_csv(label_path, classes)))
        for angle in spec.rotation_angles:
            rotated = rotate_chip(chip, angle)
            out_image = rotated.image
            if out_image.bands == 3:
                out_image = hsv_jitter(out_image, spec, draw_index=draw)
            draw += 1
            stem = f"{image_path.stem}_rot{angle:g}"
            img_out = out_dir / f"{stem}.png"
            lab_out = out_dir / f"{stem}_labels.csv"
            save_raster(out_image.with_pixels(out_image.pixels, name=stem),
                        img_out, write_sidecar=False)
            write_gt_csv(lab_out, list(rotated.labels), classes)
            list_lines.append(f"{img_out.name}\t{lab_out.name}")
    (out_dir / "train_list.txt").write_text("\n".join(list_lines) + "\n",
                                            encoding="utf-8")
    print(f"wrote {len(list_lines)} augmented chips to {out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    classes = _parse_class_flag(args.class_names)
    per_parent = read_global_detections_csv(args.detections, classes)
    dets = [d for group in per_parent.values() for d in group]
    gt = read_gt_csv(args.gt, classes)
    cfg = EvalConfig(iou_default=args.iou, iou_small_object=args.iou_small,
                     thresholds=default_thresholds(args.n_thresholds),
                     nms_iou=args.nms_iou)
    report = evaluate_detections([(dets, gt)], classes, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / "report.csv", report, classes)
    write_pr_columns(out_dir, report, classes)
    print(format_report_text(report, classes))
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config)
    # Detector time models serial inference cost, so the benchmark pins
    # one worker; parallel runs are available through `run`.
    cfg = dataclasses.replace(cfg, workers=1)
    result = run_pipeline(cfg)
    t = result.timings
    rate = result.area_km2 / max(t.detector_s, 1e-9)
    print(f"area_km2        {result.area_km2:.4f}")
    print(f"tiles           {result.tile_count}")
    print(f"tile_s          {t.tile_s:.4f}")
    print(f"detector_s      {t.detector_s:.4f}")
    print(f"stitch_s        {t.stitch_s:.4f}")
    print(f"eval_s          {t.eval_s:.4f}")
    print(f"wall_s          {t.wall_s:.4f}")
    print(f"km2_per_s       {rate:.4f}")
    print(f"overhead_factor {t.overhead_factor:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overtile",
        description="Windowed object detection over large overhead imagery")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="cut an image into overlapping cutouts")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-px", type=int, default=416)
    p.add_argument("--overlap", type=float, default=0.15)
    p.add_argument("--gsd", type=float, default=None,
                   help="override the sidecar ground sample distance")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("detect", help="run a detector over tiled cutouts")
    p.add_argument("--tiles", required=True, help="directory with manifest.tsv")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("stitch", help="merge tile-local detections globally")
    p.add_argument("--tiles", required=True, help="directory with manifest.tsv")
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--class", dest="class_names", action="append",
                   required=True, metavar="NAME[:small]")
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("run", help="tile, detect, stitch, evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=0,
                   help="override the config worker count")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="render a synthetic labeled scene")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", default=None, help="scene spec JSON")
    p.add_argument("--extent-m", type=float, default=500.0)
    p.add_argument("--gsd", type=float, default=0.3)
    p.add_argument("--count", type=int, default=0)
    p.add_argument("--object-m", type=float, default=3.0)
    p.add_argument("--class-name", default="car")
    p.add_argument("--bands", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="rotate and HSV-jitter training chips")
    p.add_argument("--train-list", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--angles", default="0,45,90,135,180,225,270,315")
    p.add_argument("--hsv-h", default="1:1")
    p.add_argument("--hsv-s", default="0.8:1.2")
    p.add_argument("--hsv-v", default="0.8:1.2")
    p.add_argument("--gsd", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="class_names", action="append",
                   required=True, metavar="NAME[:small]")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--iou-small", type=float, default=0.25)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--n-thresholds", type=int, default=30)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run with timing and km^2/s report")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OvertileError as exc:
        print(f"error[{exc.family}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
