import json
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from posepilot.cli import main
from posepilot.labels import ClassLabel
from posepilot.manifest import load_manifest, save_manifest

from conftest import build_manifest, full_conf_skeleton, make_image


@pytest.fixture
def runner():
    return CliRunner()


def make_coco_dataset(root: Path, n_per_class=5):
    """COCO annotations + images + label map on disk."""
    images_dir = root / "images"
    images_dir.mkdir()
    images, annotations, labels = [], [], {}
    classes = ["sitting", "standing", "walking_running"]
    img_id = 0
    for ci, cls in enumerate(classes):
        for k in range(n_per_class):
            img_id += 1
            name = f"{cls}_{k}.png"
            make_image(images_dir / name, seed=img_id, size=(48, 36))
            images.append(
                {"id": img_id, "file_name": name, "width": 48, "height": 36}
            )
            annotations.append(
                {
                    "image_id": img_id,
                    "category_id": 1,
                    "bbox": [4, 4, 30, 28],
                    "keypoints": full_conf_skeleton(),
                }
            )
            labels[str(img_id)] = cls
    ann_path = root / "annotations.json"
    ann_path.write_text(
        json.dumps(
            {
                "categories": [{"id": 1, "name": "person"}],
                "images": images,
                "annotations": annotations,
            }
        )
    )
    labels_path = root / "labels.json"
    labels_path.write_text(json.dumps(labels))
    return ann_path, images_dir, labels_path


class TestPipelineCommands:
    def test_ingest_split_classify_calibrate_evaluate(self, runner, tmp_path):
        ann, images_dir, labels = make_coco_dataset(tmp_path)
        manifest_path = tmp_path / "manifest.jsonl"

        res = runner.invoke(main, [
            "ingest", "--coco-annotations", str(ann),
            "--images-dir", str(images_dir),
            "--labels", str(labels), "--out", str(manifest_path),
        ])
        assert res.exit_code == 0, res.output
        assert "15 records" in res.output

        res = runner.invoke(main, [
            "split", "--manifest", str(manifest_path), "--seed", "7",
            "--fractions", "0.6,0.2,0.2",
        ])
        assert res.exit_code == 0, res.output
        manifest = load_manifest(manifest_path)
        assert all(r.split in ("train", "val", "test") for r in manifest.records)

        val_scores = tmp_path / "val_scores.jsonl"
        res = runner.invoke(main, [
            "classify", "--manifest", str(manifest_path), "--backend", "mock",
            "--promptset", "tier1", "--split", "val", "--out", str(val_scores),
        ])
        assert res.exit_code == 0, res.output

        calib = tmp_path / "calib.json"
        res = runner.invoke(main, [
            "calibrate", "--scores", str(val_scores), "--out", str(calib),
        ])
        assert res.exit_code == 0, res.output
        calib_obj = json.loads(calib.read_text())
        assert calib_obj["temperature"] > 0

        scores = tmp_path / "scores.jsonl"
        res = runner.invoke(main, [
            "classify", "--manifest", str(manifest_path), "--backend", "mock",
            "--promptset", "tier1", "--split", "test",
            "--temperature", str(calib_obj["temperature"]),
            "--out", str(scores),
        ])
        assert res.exit_code == 0, res.output

        report_path = tmp_path / "report.json"
        res = runner.invoke(main, [
            "evaluate", "--scores", str(scores), "--task", "multi",
            "--out", str(report_path),
        ])
        assert res.exit_code == 0, res.output
        report = json.loads(report_path.read_text())
        assert set(report) >= {"accuracy", "macro_f1", "confusion", "coverage"}

        res = runner.invoke(main, [
            "evaluate", "--scores", str(scores), "--task", "multi", "--table",
        ])
        assert res.exit_code == 0, res.output
        assert "Acc." in res.output

    def test_eda_command(self, runner, tmp_path):
        manifest_path = tmp_path / "m.jsonl"
        save_manifest(build_manifest({lab: 3 for lab in ClassLabel}), manifest_path)
        res = runner.invoke(main, ["eda", "--manifest", str(manifest_path)])
        assert res.exit_code == 0, res.output
        assert "640x480" in res.output

    def test_binary_task_filters_standing(self, runner, tmp_path):
        ann, images_dir, labels = make_coco_dataset(tmp_path)
        manifest_path = tmp_path / "m.jsonl"
        runner.invoke(main, [
            "ingest", "--coco-annotations", str(ann), "--images-dir", str(images_dir),
            "--labels", str(labels), "--out", str(manifest_path),
        ])
        scores = tmp_path / "s.jsonl"
        res = runner.invoke(main, [
            "classify", "--manifest", str(manifest_path), "--task", "binary",
            "--out", str(scores),
        ])
        assert res.exit_code == 0, res.output
        lines = [json.loads(l) for l in scores.read_text().splitlines()]
        assert len(lines) == 10  # standing records excluded
        assert all(set(l["similarities"]) == {"sitting", "walking_running"}
                   for l in lines)


class TestPromptCommands:
    def test_list_show_lint(self, runner):
        res = runner.invoke(main, ["prompts", "list"])
        assert res.exit_code == 0
        for tier in ("tier1", "tier2", "tier3"):
            assert tier in res.output

        res = runner.invoke(main, ["prompts", "show", "tier2"])
        assert res.exit_code == 0
        assert "a person standing still and upright" in res.output

        res = runner.invoke(main, ["prompts", "lint", "tier1"])
        assert res.exit_code == 0
        assert "clean" in res.output

    def test_add_and_lint_custom(self, runner, tmp_path):
        ps_doc = {
            "set_id": "sceney",
            "tier": 0,
            "description": "violates the guideline on purpose",
            "prompts": {
                "sitting": ["a person sitting on a park bench at sunset"],
                "standing": ["a person standing"],
                "walking_running": ["a person running"],
            },
        }
        src = tmp_path / "sceney.json"
        src.write_text(json.dumps(ps_doc))
        store = tmp_path / "store"
        res = runner.invoke(main, [
            "prompts", "add", str(src), "--promptset-dir", str(store),
        ])
        assert res.exit_code == 0, res.output
        assert (store / "sceney.json").exists()

        res = runner.invoke(main, [
            "prompts", "lint", "sceney", "--promptset-dir", str(store),
        ])
        assert res.exit_code == 0
        assert "sunset" in res.output and "scene" in res.output


def pose_manifest(tmp_path, n_per_class=4):
    """Manifest whose keypoints encode clean sit/stand/walk geometry."""
    sitting = {11: (1.2, 7.0), 13: (3.0, 7.0), 15: (3.0, 10.0),
               12: (2.8, 7.0), 14: (4.6, 7.0), 16: (4.6, 10.0)}
    standing = {}  # conftest default is upright
    walking = {15: (-0.8, 12.0), 16: (4.8, 12.0),
               13: (0.6, 9.5), 14: (3.4, 9.5)}
    by_class = {
        "sitting": sitting,
        "standing": standing,
        "walking_running": walking,
    }
    records = []
    i = 0
    for cls, overrides in by_class.items():
        for _ in range(n_per_class):
            records.append({
                "image_id": f"p{i}",
                "file_path": f"none-{i}.png",
                "label": cls,
                "width_px": 64,
                "height_px": 64,
                "keypoints": full_conf_skeleton(overrides),
            })
            i += 1
    path = tmp_path / "pose_manifest.jsonl"
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


class TestPoseCommands:
    def test_pose_eval_defaults(self, runner, tmp_path):
        manifest_path = pose_manifest(tmp_path)
        out = tmp_path / "pose_report.json"
        res = runner.invoke(main, [
            "pose-eval", "--manifest", str(manifest_path),
            "--thresholds", "default", "--split", "", "--out", str(out),
        ])
        assert res.exit_code == 0, res.output
        report = json.loads(out.read_text())
        assert report["coverage"] == 1.0
        assert report["accuracy_on_covered"] == 1.0

    def test_pose_eval_fit_needs_split(self, runner, tmp_path):
        manifest_path = pose_manifest(tmp_path)
        out = tmp_path / "r.json"
        res = runner.invoke(main, [
            "pose-eval", "--manifest", str(manifest_path),
            "--thresholds", "fit", "--out", str(out),
        ])
        assert res.exit_code == 1
        assert "train split" in res.output

    def test_pose_eval_fit_after_split(self, runner, tmp_path):
        manifest_path = pose_manifest(tmp_path, n_per_class=6)
        res = runner.invoke(main, [
            "split", "--manifest", str(manifest_path), "--seed", "3",
            "--fractions", "0.5,0.25,0.25",
        ])
        assert res.exit_code == 0, res.output
        out = tmp_path / "r.json"
        res = runner.invoke(main, [
            "pose-eval", "--manifest", str(manifest_path),
            "--thresholds", "fit", "--out", str(out),
        ])
        assert res.exit_code == 0, res.output
        report = json.loads(out.read_text())
        assert report["coverage"] == 1.0

    def test_pose_ingest_picks_largest_detection(self, runner, tmp_path):
        manifest_path = tmp_path / "m.jsonl"
        images = tmp_path / "imgs"
        images.mkdir()
        m = build_manifest({lab: 1 for lab in ClassLabel}, images_dir=images)
        save_manifest(m, manifest_path)

        detector = tmp_path / "detector.py"
        small = [float(v) for v in full_conf_skeleton()]
        big = [v + 1.0 if i % 3 != 2 else v for i, v in enumerate(small)]
        detector.write_text(
            "import json,sys\n"
            f"small={small!r}\n"
            f"big={big!r}\n"
            "print(json.dumps(["
            "{'keypoints': small, 'box': [0,0,10,10]},"
            "{'keypoints': big, 'box': [0,0,50,50]}"
            "]).replace(chr(39), chr(34)))\n"
        )
        report_path = tmp_path / "audit.json"
        res = runner.invoke(main, [
            "pose-ingest", "--manifest", str(manifest_path),
            "--detector-cmd", f"{sys.executable} {detector}",
            "--report", str(report_path),
        ])
        assert res.exit_code == 0, res.output
        updated = load_manifest(manifest_path)
        assert all(r.keypoints is not None for r in updated.records)
        assert updated.records[0].keypoints[0] == big[0]
        audit = json.loads(report_path.read_text())
        assert all(v["chosen_detection"] == 1 for v in audit.values())


class TestSaliencyCommand:
    def test_stats_and_overlays(self, runner, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        m = build_manifest({lab: 1 for lab in ClassLabel}, images_dir=images)
        manifest_path = tmp_path / "m.jsonl"
        save_manifest(m, manifest_path)
        out = tmp_path / "sal.jsonl"
        overlays = tmp_path / "overlays"
        res = runner.invoke(main, [
            "saliency", "--manifest", str(manifest_path), "--backend", "mock",
            "--promptset", "tier3", "--out", str(out),
            "--overlay-dir", str(overlays),
        ])
        assert res.exit_code == 0, res.output
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 9  # 3 images x 3 class prompts
        assert all(0 <= l["normalized_entropy"] <= 1 for l in lines)
        assert len(list(overlays.glob("*.png"))) == 9


class TestSweepCommand:
    def test_sweep_end_to_end(self, runner, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        m = build_manifest({lab: 10 for lab in ClassLabel}, images_dir=images)
        manifest_path = tmp_path / "m.jsonl"
        save_manifest(m, manifest_path)
        runner.invoke(main, [
            "split", "--manifest", str(manifest_path), "--seed", "11",
        ])
        config = tmp_path / "exp.toml"
        config.write_text(
            '[experiment]\nbackends = ["mock"]\nseeds = [0, 1]\n'
            'include_probe = false\n'
        )
        out_dir = tmp_path / "sweep"
        res = runner.invoke(main, [
            "sweep", "--config", str(config), "--manifest", str(manifest_path),
            "--out", str(out_dir),
        ])
        assert res.exit_code == 0, res.output
        assert (out_dir / "report.json").exists()
        assert (out_dir / "tables.txt").exists()

    def test_failed_cells_nonzero_exit(self, runner, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        m = build_manifest({lab: 4 for lab in ClassLabel}, images_dir=images)
        manifest_path = tmp_path / "m.jsonl"
        save_manifest(m, manifest_path)  # unsplit: cells will fail
        config = tmp_path / "exp.toml"
        config.write_text('[experiment]\nbackends = ["mock"]\nseeds = [0]\n')
        res = runner.invoke(main, [
            "sweep", "--config", str(config), "--manifest", str(manifest_path),
            "--out", str(tmp_path / "sweep"),
        ])
        assert res.exit_code == 2
