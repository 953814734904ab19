"""Pipeline orchestration and CLI tests.

Commands run in-process through main(argv); flows compose through real
files in tmp directories.
"""

import json
import sys
import textwrap

import numpy as np
import pytest

from overtile.cli import main
from overtile.errors import MissingGsdError, ValidationError
from overtile.imageio import (load_raster, read_global_detections_csv,
                              save_raster, write_gt_csv)
from overtile.pipeline import load_pipeline_config, run_pipeline
from overtile.synth import ObjectPopulation, SceneSpec, render_scene
from overtile.core import ClassTable


def make_scene(tmp_path, count=60, extent_m=400.0, seed=3, bands=1,
               name="scene"):
    spec = SceneSpec(extent_m=extent_m, gsd=0.3,
                     populations=(ObjectPopulation("car", count, 3.0),),
                     bands=bands, seed=seed, name=name)
    image, labels = render_scene(spec)
    save_raster(image, tmp_path / f"{name}.png")
    write_gt_csv(tmp_path / f"{name}_gt.csv", labels, spec.class_table())
    return spec, image, labels


def write_config(tmp_path, name="scene", detector=None, **overrides):
    cfg = {
        "image": f"{name}.png",
        "gt": f"{name}_gt.csv",
        "out_dir": "out",
        "classes": [{"name": "car", "small_object": True}],
        "detector": detector or {"kind": "oracle", "noiseless": True},
        "window_px": 416,
        "overlap": 0.15,
        "nms_iou": 0.5,
        "workers": 1,
        "seed": 0,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestRunPipeline:
    def test_noiseless_run_scores_perfectly(self, tmp_path):
        _, _, labels = make_scene(tmp_path)
        cfg = load_pipeline_config(write_config(tmp_path))
        result = run_pipeline(cfg)
        assert len(result.detections) == len(labels)
        assert result.report.map_score == 1.0
        assert result.detections_path.exists()
        assert all(p.exists() for p in result.report_paths)

    def test_detection_file_row_count(self, tmp_path):
        _, _, labels = make_scene(tmp_path)
        cfg = load_pipeline_config(write_config(tmp_path))
        result = run_pipeline(cfg)
        rows = [l for l in result.detections_path.read_text().splitlines()
                if l.strip()]
        assert len(rows) == len(labels)

    def test_no_gt_skips_report(self, tmp_path):
        make_scene(tmp_path)
        path = write_config(tmp_path)
        cfg_dict = json.loads(path.read_text())
        del cfg_dict["gt"]
        cfg_dict["detector"] = {"kind": "gridsim"}
        path.write_text(json.dumps(cfg_dict))
        with pytest.raises(ValidationError):
            # gt-based detectors cannot run without ground truth
            run_pipeline(load_pipeline_config(path))

    def test_gridsim_detector_through_config(self, tmp_path):
        make_scene(tmp_path, count=30)
        cfg = load_pipeline_config(write_config(
            tmp_path, detector={"kind": "gridsim", "downsample": 32,
                                "boxes_per_cell": 5}))
        result = run_pipeline(cfg)
        # sparse scene: no cell exceeds capacity, every object recovered
        assert result.report.map_score == 1.0

    def test_workers_do_not_change_output(self, tmp_path):
        make_scene(tmp_path, count=40)
        detector = {"kind": "oracle", "dropout_prob": 0.2, "fp_rate": 1.0,
                    "jitter_px": 0.5}
        out = {}
        for workers in (1, 2):
            cfg = load_pipeline_config(write_config(
                tmp_path, detector=detector, workers=workers,
                out_dir=f"out_{workers}"))
            result = run_pipeline(cfg)
            out[workers] = result.detections_path.read_bytes()
        assert out[1] == out[2]

    def test_sim2x_quadruples_tiles_and_recovers_objects(self, tmp_path):
        make_scene(tmp_path, count=30, extent_m=500.0)
        base = run_pipeline(load_pipeline_config(write_config(
            tmp_path, out_dir="out_base")))
        two_x = run_pipeline(load_pipeline_config(write_config(
            tmp_path, sim2x=True, out_dir="out_2x")))
        assert two_x.tile_count / base.tile_count == pytest.approx(4.0,
                                                                   rel=0.15)
        assert two_x.report.map_score == 1.0

    def test_ensemble_config_path(self, tmp_path):
        spec = SceneSpec(extent_m=400.0, gsd=0.3,
                         populations=(ObjectPopulation("car", 10, 3.0),
                                      ObjectPopulation("airport", 1, 90.0)),
                         bands=1, seed=5, name="dual")
        image, labels = render_scene(spec)
        save_raster(image, tmp_path / "dual.png")
        write_gt_csv(tmp_path / "dual_gt.csv", labels, spec.class_table())
        config = write_config(
            tmp_path, name="dual",
            classes=[{"name": "car", "small_object": True},
                     {"name": "airport"}],
            ensemble={"profiles": [
                {"name": "vehicles", "window_m": 124.8, "window_px": 416,
                 "classes": ["car"],
                 "detector": {"kind": "oracle", "noiseless": True}},
                {"name": "airports", "window_m": 400.0, "window_px": 416,
                 "classes": ["airport"],
                 "detector": {"kind": "oracle", "noiseless": True}}]})
        result = run_pipeline(load_pipeline_config(config))
        assert len(result.detections) == len(labels)
        assert result.report.map_score == 1.0


class TestCliFlows:
    def test_synth_tile_detect_stitch_matches_run(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--extent-m", "400",
                     "--gsd", "0.3", "--count", "50", "--object-m", "3",
                     "--class-name", "car", "--bands", "1", "--seed", "11",
                     "--name", "scene"]) == 0
        config = write_config(tmp_path)

        tiles_dir = tmp_path / "tiles"
        assert main(["tile", "--image", str(tmp_path / "scene.png"),
                     "--out", str(tiles_dir)]) == 0
        out = capsys.readouterr().out
        assert "cutouts" in out

        local_csv = tmp_path / "local.csv"
        assert main(["detect", "--tiles", str(tiles_dir),
                     "--config", str(config), "--out", str(local_csv)]) == 0

        global_csv = tmp_path / "global.csv"
        assert main(["stitch", "--tiles", str(tiles_dir),
                     "--detections", str(local_csv),
                     "--out", str(global_csv), "--class", "car:small"]) == 0

        assert main(["run", "--config", str(config)]) == 0
        run_csv = tmp_path / "out" / "detections.csv"
        table = ClassTable.from_names(["car"], small={"car"})
        staged = read_global_detections_csv(global_csv, table)
        direct = read_global_detections_csv(run_csv, table)
        flat = {p: sorted((d.class_id, d.box.astuple()) for d in dets)
                for p, dets in staged.items()}
        assert flat == {p: sorted((d.class_id, d.box.astuple()) for d in dets)
                        for p, dets in direct.items()}

    def test_run_reports_map(self, tmp_path, capsys):
        make_scene(tmp_path)
        config = write_config(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "mAP" in out and "1.0000" in out

    def test_evaluate_command(self, tmp_path, capsys):
        make_scene(tmp_path)
        config = write_config(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        capsys.readouterr()
        assert main(["evaluate",
                     "--detections", str(tmp_path / "out" / "detections.csv"),
                     "--gt", str(tmp_path / "scene_gt.csv"),
                     "--out", str(tmp_path / "eval"),
                     "--class", "car:small"]) == 0
        out = capsys.readouterr().out
        assert "mAP" in out
        assert (tmp_path / "eval" / "report.csv").exists()
        assert (tmp_path / "eval" / "pr_car.dat").exists()

    def test_benchmark_reports_area_and_overhead(self, tmp_path, capsys):
        make_scene(tmp_path)
        config = write_config(tmp_path)
        assert main(["benchmark", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        fields = dict(line.split(None, 1) for line in out.splitlines())
        # scene is round(400 / 0.3) = 1333 px on a side at 0.3 m per px
        assert float(fields["area_km2"]) == pytest.approx(
            (1333 * 0.3 / 1000) ** 2, abs=1e-4)
        assert float(fields["overhead_factor"]) >= 1.0
        assert float(fields["km2_per_s"]) > 0

    def test_missing_gsd_sidecar_fails_with_family_code(self, tmp_path,
                                                        capsys):
        make_scene(tmp_path)
        (tmp_path / "scene.json").unlink()  # remove the sidecar
        config = write_config(tmp_path)
        code = main(["run", "--config", str(config)])
        assert code == MissingGsdError.exit_code
        err = capsys.readouterr().err
        assert "error[missing-gsd]" in err

    def test_missing_detector_binary_fails_with_process_code(self, tmp_path,
                                                             capsys):
        make_scene(tmp_path)
        config = write_config(
            tmp_path,
            detector={"kind": "external",
                      "command": "/nonexistent/detector {manifest} {output}"})
        code = main(["run", "--config", str(config)])
        assert code == 9
        assert "error[process-failure]" in capsys.readouterr().err

    def test_external_detector_through_run(self, tmp_path):
        make_scene(tmp_path, count=25)
        script = tmp_path / "fake.py"
        script.write_text(textwrap.dedent("""
            import sys
            rows = []
            for line in open(sys.argv[1]):
                name = line.split('\\t')[0]
                rows.append(f"{name},car,5.0,5.0,15.0,15.0,0.9")
            open(sys.argv[2], 'w').write('\\n'.join(rows))
            """))
        config = write_config(
            tmp_path,
            detector={"kind": "external",
                      "command": f"{sys.executable} {script} "
                                 "{manifest} {output}"})
        cfg = load_pipeline_config(config)
        result = run_pipeline(cfg)
        # one synthetic detection per tile, merged across overlaps
        assert len(result.detections) >= 1
        assert (tmp_path / "out" / "tiles" / "manifest.tsv").exists()

    def test_external_detector_with_relative_config_paths(self, tmp_path,
                                                          monkeypatch):
        # the child process runs inside the tiles dir; paths handed to the
        # command template must still resolve
        make_scene(tmp_path, count=10, extent_m=150.0)
        script = tmp_path / "fake.py"
        script.write_text(textwrap.dedent("""
            import sys
            rows = []
            for line in open(sys.argv[1]):
                name = line.split('\\t')[0]
                rows.append(f"{name},car,1.0,1.0,9.0,9.0,0.8")
            open(sys.argv[2], 'w').write('\\n'.join(rows))
            """))
        config = write_config(
            tmp_path, out_dir="rel_out",
            detector={"kind": "external",
                      "command": f"{sys.executable} {script} "
                                 "{manifest} {output}"})
        monkeypatch.chdir(tmp_path.parent)
        result = run_pipeline(load_pipeline_config(
            config.relative_to(tmp_path.parent)))
        assert len(result.detections) >= 1

    def test_augment_command_multiplies_chips(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        from overtile.core import RasterImage
        from overtile.imageio import save_raster as save
        table = ClassTable.from_names(["car"])
        lines = []
        for i in range(2):
            pixels = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
            img_path = tmp_path / f"chip{i}.png"
            save(RasterImage(f"chip{i}", pixels, 0.3), img_path,
                 write_sidecar=False)
            lab_path = tmp_path / f"chip{i}_labels.csv"
            lab_path.write_text("car,10,10,20,20\n")
            lines.append(f"{img_path.name}\t{lab_path.name}")
        train_list = tmp_path / "train.txt"
        train_list.write_text("\n".join(lines) + "\n")

        out_dir = tmp_path / "aug"
        assert main(["augment", "--train-list", str(train_list),
                     "--out", str(out_dir), "--angles", "0,90,180,270",
                     "--seed", "3"]) == 0
        listed = (out_dir / "train_list.txt").read_text().splitlines()
        assert len(listed) == 8  # 2 chips x 4 angles
        for line in listed:
            img_name, lab_name = line.split("\t")
            chip = load_raster(out_dir / img_name, gsd=0.3)
            for row in (out_dir / lab_name).read_text().splitlines():
                _, x0, y0, x1, y1 = row.split(",")
                assert 0 <= float(x0) <= float(x1) <= chip.width
                assert 0 <= float(y0) <= float(y1) <= chip.height

    def test_identity_augment_round_trips_pixels(self, tmp_path):
        rng = np.random.default_rng(1)
        from overtile.core import RasterImage
        pixels = rng.integers(0, 255, (32, 32, 3), dtype=np.uint8)
        img_path = tmp_path / "chip.png"
        save_raster(RasterImage("chip", pixels, 0.3), img_path,
                    write_sidecar=False)
        (tmp_path / "chip_labels.csv").write_text("car,4,4,9,9\n")
        (tmp_path / "train.txt").write_text("chip.png\tchip_labels.csv\n")
        out_dir = tmp_path / "aug"
        assert main(["augment", "--train-list", str(tmp_path / "train.txt"),
                     "--out", str(out_dir), "--angles", "0",
                     "--hsv-h", "1:1", "--hsv-s", "1:1", "--hsv-v", "1:1",
                     "--seed", "0"]) == 0
        out = load_raster(out_dir / "chip_rot0.png", gsd=0.3)
        diff = np.abs(out.pixels.astype(int) - pixels.astype(int))
        assert diff.max() <= 1

    def test_synth_same_seed_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / sub),
                         "--extent-m", "150", "--count", "20",
                         "--seed", "5", "--name", "s"]) == 0
        assert (tmp_path / "a" / "s.png").read_bytes() == \
            (tmp_path / "b" / "s.png").read_bytes()
        assert (tmp_path / "a" / "s_gt.csv").read_bytes() == \
            (tmp_path / "b" / "s_gt.csv").read_bytes()

    def test_infeasible_synth_exits_with_family_code(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path), "--extent-m", "30",
                     "--count", "500", "--object-m", "10"])
        assert code == 12
        assert "error[infeasible-density]" in capsys.readouterr().err
