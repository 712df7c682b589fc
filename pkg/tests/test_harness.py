import json

import pytest

from posepilot.errors import InputError
from posepilot.harness import ExperimentConfig, render_tables, run_sweep, save_sweep
from posepilot.labels import ClassLabel
from posepilot.manifest import Manifest, stratified_split

from conftest import build_manifest


@pytest.fixture
def split_manifest(tmp_path):
    images = tmp_path / "imgs"
    images.mkdir()
    m = build_manifest(
        {ClassLabel.sitting: 10, ClassLabel.standing: 10, ClassLabel.walking_running: 10},
        images_dir=images,
    )
    return stratified_split(m, (0.8, 0.1, 0.1), seed=5)


def small_config(**overrides):
    base = dict(
        backends=("mock",),
        prompt_sets=("tier1", "tier2", "tier3"),
        tasks=("binary", "multi"),
        seeds=(0, 1),
        calibration_policy="fixed_tier1",
        include_probe=False,
        probe=__import__("posepilot.probe", fromlist=["ProbeConfig"]).ProbeConfig(
            max_epochs=30
        ),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestRunSweep:
    def test_grid_arithmetic(self, split_manifest):
        report = run_sweep(small_config(), split_manifest)
        zs = [c for c in report.cells if c.kind == "zeroshot"]
        assert len(zs) == 3 * 2 * 2  # tiers x tasks x seeds
        assert not report.failed_cells

    def test_zero_shot_seed_independent(self, split_manifest):
        report = run_sweep(small_config(), split_manifest)
        for agg in report.aggregates():
            assert agg["sd_accuracy"] == 0.0
            assert agg["sd_macro_f1"] == 0.0

    def test_byte_identical_reports(self, split_manifest):
        cfg = small_config(include_probe=True)
        blobs = []
        for _ in range(2):
            report = run_sweep(cfg, split_manifest)
            blobs.append(json.dumps(report.to_json_obj(), sort_keys=True))
        assert blobs[0] == blobs[1]

    def test_zero_shot_ignores_train_split(self, split_manifest):
        cfg = small_config()
        full = run_sweep(cfg, split_manifest)
        no_train = Manifest(
            tuple(r for r in split_manifest.records if r.split != "train"),
            split_manifest.resize_target,
        )
        trimmed = run_sweep(cfg, no_train)
        fm = {
            (c.prompt_set, c.task, c.seed): c.metrics.to_json_obj()
            for c in full.cells
            if c.kind == "zeroshot"
        }
        tm = {
            (c.prompt_set, c.task, c.seed): c.metrics.to_json_obj()
            for c in trimmed.cells
            if c.kind == "zeroshot"
        }
        assert fm == tm

    def test_probe_cells_trained_per_seed(self, split_manifest):
        report = run_sweep(small_config(include_probe=True, seeds=(0, 1, 2)),
                           split_manifest)
        probes = [c for c in report.cells if c.kind == "probe"]
        assert len(probes) == 2 * 3  # tasks x seeds
        assert all(c.metrics is not None for c in probes)

    def test_calibration_fixed_across_tiers(self, split_manifest):
        report = run_sweep(small_config(), split_manifest)
        temps = {
            c.prompt_set: c.temperature
            for c in report.cells
            if c.kind == "zeroshot"
        }
        assert len(set(temps.values())) == 1  # one shared temperature
        assert "mock" in report.calibrations
        assert list(report.calibrations["mock"]) == ["tier1"]

    def test_per_tier_calibration(self, split_manifest):
        report = run_sweep(small_config(calibration_policy="per_tier"), split_manifest)
        assert set(report.calibrations["mock"]) == {"tier1", "tier2", "tier3"}

    def test_unknown_backend_records_failures(self, split_manifest):
        report = run_sweep(small_config(backends=("mock", "missing")), split_manifest)
        failed = report.failed_cells
        assert failed and all(c.backend == "missing" for c in failed)
        ok = [c for c in report.cells if c.backend == "mock" and c.error is None]
        assert ok

    def test_missing_test_split_rejected(self, tmp_path):
        images = tmp_path / "i"
        images.mkdir()
        m = build_manifest({lab: 4 for lab in ClassLabel}, images_dir=images)
        report = run_sweep(small_config(calibration_policy="none"), m)
        assert all(c.error is not None for c in report.cells if c.kind == "zeroshot")


class TestRenderAndSave:
    def test_tables_row_ordering_tasks_outer(self, split_manifest):
        report = run_sweep(small_config(), split_manifest)
        text = render_tables(report)
        lines = [l for l in text.splitlines() if l.startswith(("binary", "multi"))]
        got = [tuple(l.split()[:2]) for l in lines]
        assert got == [
            ("binary", "tier1"), ("binary", "tier2"), ("binary", "tier3"),
            ("multi", "tier1"), ("multi", "tier2"), ("multi", "tier3"),
        ]

    def test_two_decimal_rendering(self, split_manifest):
        report = run_sweep(small_config(), split_manifest)
        for token in render_tables(report).split():
            if token.replace(".", "").isdigit() and "." in token:
                assert len(token.split(".")[1]) == 2

    def test_save_sweep_outputs(self, split_manifest, tmp_path):
        report = run_sweep(small_config(), split_manifest)
        out = tmp_path / "sweep"
        save_sweep(report, out)
        assert (out / "report.json").exists()
        assert (out / "tables.txt").exists()
        score_files = list((out / "scores").glob("*.jsonl"))
        assert len(score_files) == 6  # tiers x tasks

    def test_single_cell_table(self, split_manifest):
        report = run_sweep(
            small_config(prompt_sets=("tier1",), tasks=("multi",), seeds=(0,)),
            split_manifest,
        )
        text = render_tables(report)
        assert text.count("multi") == 1


class TestConfig:
    def test_from_toml(self, tmp_path):
        doc = """
[experiment]
backends = ["mock"]
prompt_sets = ["tier1", "tier3"]
tasks = ["multi"]
seeds = [3, 4]
calibration_policy = "none"
abstain_margin = 0.05
include_probe = false
evaluate_on = "full"

[probe]
learning_rate = 0.2
max_epochs = 50
patience = 4
batch_size = 16
"""
        path = tmp_path / "exp.toml"
        path.write_text(doc)
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.backends == ("mock",)
        assert cfg.prompt_sets == ("tier1", "tier3")
        assert cfg.seeds == (3, 4)
        assert cfg.calibration_policy == "none"
        assert cfg.abstain_margin == 0.05
        assert cfg.evaluate_on == "full"
        assert cfg.probe.patience == 4

    def test_singular_backend_table(self, tmp_path):
        doc = """
[backend]
name = "clip-family"
weights_path = "/models/clip"
"""
        path = tmp_path / "exp.toml"
        path.write_text(doc)
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.backends == ("clip-family",)
        assert cfg.backend_options == {"clip-family": {"weights_path": "/models/clip"}}

    def test_per_backend_tables(self, tmp_path):
        doc = """
[experiment]
backends = ["mock", "siglip-family"]

[backend.siglip-family]
weights_path = "/models/siglip"
"""
        path = tmp_path / "exp.toml"
        path.write_text(doc)
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.backends == ("mock", "siglip-family")
        assert cfg.backend_options["siglip-family"] == {"weights_path": "/models/siglip"}

    def test_validation(self):
        with pytest.raises(InputError):
            ExperimentConfig(backends=())
        with pytest.raises(InputError):
            ExperimentConfig(backends=("mock",), seeds=(1, 1))
        with pytest.raises(InputError):
            ExperimentConfig(backends=("mock",), calibration_policy="bogus")
        with pytest.raises(InputError):
            ExperimentConfig(backends=("mock",), tasks=("nope",))
