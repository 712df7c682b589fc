"""Acceptance suite: one test per release criterion, at pinned tolerances.

Runs under pytest (a summary line per criterion prints at the end of the
session) or standalone: `python tests/test_acceptance.py`.
"""

import filecmp
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from posepilot.calibration import expected_calibration_error, fit_temperature
from posepilot.labels import ALL_LABELS, ClassLabel
from posepilot.manifest import largest_remainder_allocation, load_manifest, stratified_split
from posepilot.metrics import compute_metrics
from posepilot.posebaseline import KeypointSkeleton, extract_features
from posepilot.probe import EarlyStopper, loss_and_grad
from posepilot.saliency import HeatMap, stats
from posepilot.zeroshot import softmax_over

from conftest import build_manifest, full_conf_skeleton, make_image

ACCEPTANCE = {}


def criterion(name):
    def deco(fn):
        ACCEPTANCE[name] = fn
        return fn

    return deco


# --------------------------------------------------------------------------
# 1. metric oracle equivalence
# --------------------------------------------------------------------------

def _oracle_metrics(truths, preds):
    """Independent tp/fp/fn arithmetic over the three classes."""
    precisions, recalls, f1s = [], [], []
    for c in ALL_LABELS:
        tp = sum(1 for t, p in zip(truths, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(truths, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(truths, preds) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    accuracy = sum(1 for t, p in zip(truths, preds) if t == p) / len(truths)
    return (accuracy, sum(precisions) / 3, sum(recalls) / 3, sum(f1s) / 3)


@criterion("metric-oracle-equivalence")
def test_metric_oracle_equivalence():
    rng = np.random.Generator(np.random.PCG64(1234))
    start = time.monotonic()
    for _ in range(1000):
        n = int(rng.integers(3, 80))
        truths = [ALL_LABELS[int(i)] for i in rng.integers(0, 3, n)]
        preds = [ALL_LABELS[int(i)] for i in rng.integers(0, 3, n)]
        report = compute_metrics([(t, p, False) for t, p in zip(truths, preds)])
        acc, mp, mr, mf1 = _oracle_metrics(truths, preds)
        assert abs(report.accuracy - acc) <= 1e-12
        assert abs(report.macro_precision - mp) <= 1e-12
        assert abs(report.macro_recall - mr) <= 1e-12
        assert abs(report.macro_f1 - mf1) <= 1e-12
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"metric oracle sweep took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 2. temperature argmax invariance
# --------------------------------------------------------------------------

@criterion("temperature-argmax-invariance")
def test_temperature_argmax_invariance():
    rng = np.random.Generator(np.random.PCG64(77))
    scores = rng.uniform(-1, 1, size=(10_000, 3))
    base = np.argmax(scores, axis=1)
    for tau in (0.01, 0.1, 1.0, 10.0, 100.0):
        probs = np.stack([softmax_over(row, tau) for row in scores])
        exceptions = int((np.argmax(probs, axis=1) != base).sum())
        assert exceptions == 0, f"tau={tau}: {exceptions} argmax changes"


# --------------------------------------------------------------------------
# 3. ECE and temperature fitting
# --------------------------------------------------------------------------

@criterion("ece-and-temperature-fit")
def test_ece_and_temperature_fit():
    # perfectly calibrated synthetic
    assert expected_calibration_error([(1.0, True)] * 50, 10) <= 1e-9
    # the two-bin hand example, exactly
    preds = [(0.2, True)] + [(0.2, False)] * 4 + [(0.9, True)] * 4 + [(0.9, False)]
    assert expected_calibration_error(preds, 2) == 0.05
    # recover a generative temperature of 0.25 from 500 samples within 20%
    rng = np.random.Generator(np.random.PCG64(0))
    raw = rng.uniform(-1, 1, size=(500, 3))
    z = raw / 0.25
    z = z - z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    samples = [(list(s), int(rng.choice(3, p=p))) for s, p in zip(raw, probs)]
    fitted = fit_temperature(samples).temperature
    assert abs(fitted - 0.25) <= 0.05, f"fitted {fitted}, wanted 0.25 +- 20%"


# --------------------------------------------------------------------------
# 4. angle geometry
# --------------------------------------------------------------------------

def _sk(points):
    flat = []
    for i in range(17):
        x, y = points[i]
        flat += [x, y, 1.0]
    return KeypointSkeleton.from_flat(flat)


def _angle_oracle(b, a, c):
    ux, uy = a[0] - b[0], a[1] - b[1]
    vx, vy = c[0] - b[0], c[1] - b[1]
    return math.degrees(math.atan2(abs(ux * vy - uy * vx), ux * vx + uy * vy))


@criterion("angle-geometry")
def test_angle_geometry():
    base = {i: (float(i), float(i % 5)) for i in range(17)}
    collinear = {**base, 11: (0.0, 0.0), 13: (0.0, 1.0), 15: (0.0, 2.0)}
    assert abs(extract_features(_sk(collinear)).knee_angle_left - 180.0) <= 1e-9
    right = {**base, 11: (0.0, 0.0), 13: (0.0, 1.0), 15: (1.0, 1.0)}
    assert abs(extract_features(_sk(right)).knee_angle_left - 90.0) <= 1e-9

    rng = np.random.Generator(np.random.PCG64(4242))
    for _ in range(1000):
        pts = {i: (float(rng.uniform(-100, 100)), float(rng.uniform(-100, 100)))
               for i in range(17)}
        f = extract_features(_sk(pts))
        pairs = [
            (f.knee_angle_left, _angle_oracle(pts[13], pts[11], pts[15])),
            (f.knee_angle_right, _angle_oracle(pts[14], pts[12], pts[16])),
            (f.hip_angle_left, _angle_oracle(pts[11], pts[5], pts[13])),
            (f.hip_angle_right, _angle_oracle(pts[12], pts[6], pts[14])),
        ]
        for got, expected in pairs:
            assert abs(got - expected) <= 1e-9

        # rigid translation and uniform scaling leave interior angles alone
        dx, dy = rng.uniform(-500, 500, 2)
        scale = float(rng.uniform(0.1, 10))
        moved = {i: ((x + dx) * scale, (y + dy) * scale) for i, (x, y) in pts.items()}
        g = extract_features(_sk(moved))
        for attr in ("knee_angle_left", "knee_angle_right",
                     "hip_angle_left", "hip_angle_right", "torso_verticality"):
            assert abs(getattr(g, attr) - getattr(f, attr)) <= 1e-6


# --------------------------------------------------------------------------
# 5. saliency statistics
# --------------------------------------------------------------------------

@criterion("saliency-statistics")
def test_saliency_statistics():
    uniform = HeatMap(4, 4, np.ones((4, 4)))
    st = stats(uniform, (0.0, 0.0, 2.0, 4.0))
    assert st.normalized_entropy == 1.0
    assert st.in_person_proportion == 0.5

    delta = np.zeros((4, 4))
    delta[2, 3] = 7.0
    inside = stats(HeatMap(4, 4, delta), (2.0, 1.0, 2.0, 3.0))
    assert inside.normalized_entropy == 0.0
    assert inside.in_person_proportion in (0.0, 1.0)
    assert inside.in_person_proportion == 1.0
    outside = stats(HeatMap(4, 4, delta), (0.0, 0.0, 2.0, 2.0))
    assert outside.in_person_proportion == 0.0

    worked = HeatMap(2, 2, np.array([[0.5, 0.25], [0.125, 0.125]]))
    st = stats(worked, (0.0, 0.0, 1.0, 2.0))
    assert st.in_person_proportion == 0.625
    assert st.normalized_entropy == 0.875


# --------------------------------------------------------------------------
# 6. split determinism and stratification at the reference class counts
# --------------------------------------------------------------------------

@criterion("split-determinism-stratification")
def test_split_determinism_stratification():
    manifest = build_manifest(
        {ClassLabel.sitting: 95, ClassLabel.standing: 92, ClassLabel.walking_running: 98}
    )
    expected = {
        lab: tuple(largest_remainder_allocation(n, (0.8, 0.1, 0.1)))
        for lab, n in manifest.class_counts.items()
    }
    assert expected[ClassLabel.sitting] == (76, 10, 9)
    assert expected[ClassLabel.standing] == (74, 9, 9)
    assert expected[ClassLabel.walking_running] == (78, 10, 10)

    first = stratified_split(manifest, (0.8, 0.1, 0.1), seed=2024)
    second = stratified_split(manifest, (0.8, 0.1, 0.1), seed=2024)
    assert [r.split for r in first.records] == [r.split for r in second.records]
    for lab in ALL_LABELS:
        got = tuple(
            sum(1 for r in first.records if r.label == lab and r.split == s)
            for s in ("train", "val", "test")
        )
        assert got == expected[lab], f"{lab.name}: {got} != {expected[lab]}"


# --------------------------------------------------------------------------
# 7. end-to-end mock pipeline, byte-identical and under a minute
# --------------------------------------------------------------------------

def _build_e2e_dataset(root: Path, counts=(95, 92, 98)) -> None:
    images_dir = root / "images"
    images_dir.mkdir()
    images, annotations, labels = [], [], {}
    img_id = 0
    for cls, n in zip(("sitting", "standing", "walking_running"), counts):
        for _ in range(n):
            img_id += 1
            name = f"{cls}_{img_id}.png"
            make_image(images_dir / name, seed=img_id, size=(48, 36))
            images.append({"id": img_id, "file_name": name, "width": 48, "height": 36})
            annotations.append(
                {"image_id": img_id, "category_id": 1, "bbox": [4, 4, 30, 28],
                 "keypoints": full_conf_skeleton()}
            )
            labels[str(img_id)] = cls
    (root / "annotations.json").write_text(
        json.dumps({"categories": [{"id": 1, "name": "person"}],
                    "images": images, "annotations": annotations})
    )
    (root / "labels.json").write_text(json.dumps(labels))


def _run_e2e(run_dir: Path) -> None:
    from click.testing import CliRunner

    from posepilot.cli import main

    runner = CliRunner()

    def invoke(args):
        res = runner.invoke(main, args, catch_exceptions=False)
        assert res.exit_code == 0, f"{args}: {res.output}"

    run_dir.mkdir()
    manifest = run_dir / "manifest.jsonl"
    invoke(["ingest", "--coco-annotations", "annotations.json",
            "--images-dir", "images", "--labels", "labels.json",
            "--out", str(manifest)])
    invoke(["split", "--manifest", str(manifest), "--seed", "42"])

    val_scores = run_dir / "val_tier1_multi.jsonl"
    invoke(["classify", "--manifest", str(manifest), "--backend", "mock",
            "--promptset", "tier1", "--split", "val", "--out", str(val_scores)])
    invoke(["calibrate", "--scores", str(val_scores),
            "--out", str(run_dir / "calib.json")])
    temperature = json.loads((run_dir / "calib.json").read_text())["temperature"]

    for tier in ("tier1", "tier2", "tier3"):
        for task in ("multi", "binary"):
            scores = run_dir / f"scores_{tier}_{task}.jsonl"
            invoke(["classify", "--manifest", str(manifest), "--backend", "mock",
                    "--promptset", tier, "--task", task, "--split", "test",
                    "--temperature", str(temperature), "--out", str(scores)])
            invoke(["evaluate", "--scores", str(scores), "--task", task,
                    "--out", str(run_dir / f"report_{tier}_{task}.json")])

    config = run_dir / "experiment.toml"
    config.write_text(
        '[experiment]\nbackends = ["mock"]\nseeds = [0, 1]\n'
        'include_probe = true\n\n[probe]\nmax_epochs = 40\n'
    )
    invoke(["sweep", "--config", str(config), "--manifest", str(manifest),
            "--out", str(run_dir / "sweep")])


@criterion("end-to-end-mock-pipeline")
def test_end_to_end_mock_pipeline(tmp_path):
    _build_e2e_dataset(tmp_path)
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        start = time.monotonic()
        _run_e2e(tmp_path / "run1")
        _run_e2e(tmp_path / "run2")
        elapsed = time.monotonic() - start
    finally:
        os.chdir(cwd)
    # both runs < 60s combined comfortably clears the single-run budget
    assert elapsed < 60.0, f"two pipeline runs took {elapsed:.1f}s"

    run1, run2 = tmp_path / "run1", tmp_path / "run2"
    produced = sorted(
        p.relative_to(run1) for p in run1.rglob("*") if p.is_file()
    )
    assert produced, "pipeline produced no outputs"
    for rel in produced:
        a, b = run1 / rel, run2 / rel
        assert b.exists(), f"second run missing {rel}"
        assert filecmp.cmp(a, b, shallow=False), f"output differs: {rel}"

    # ensure the full grid actually ran
    assert (run1 / "sweep" / "tables.txt").exists()
    for tier in ("tier1", "tier2", "tier3"):
        for task in ("multi", "binary"):
            assert (run1 / f"report_{tier}_{task}.json").exists()


# --------------------------------------------------------------------------
# 8. probe gradient and early stopping
# --------------------------------------------------------------------------

@criterion("probe-gradient-early-stopping")
def test_probe_gradient_early_stopping():
    rng = np.random.Generator(np.random.PCG64(31))
    x = rng.normal(size=(3, 6))
    y = np.array([2, 0, 1])
    weights = rng.normal(size=(6, 3)) * 0.4
    bias = rng.normal(size=3) * 0.4
    _, gw, gb = loss_and_grad(weights.copy(), bias.copy(), x, y)
    eps = 1e-6

    def loss_at(w, b):
        return loss_and_grad(w, b, x, y)[0]

    worst = 0.0
    for i in range(6):
        for j in range(3):
            hi, lo = weights.copy(), weights.copy()
            hi[i, j] += eps
            lo[i, j] -= eps
            numeric = (loss_at(hi, bias) - loss_at(lo, bias)) / (2 * eps)
            rel = abs(gw[i, j] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, rel)
    for j in range(3):
        hi, lo = bias.copy(), bias.copy()
        hi[j] += eps
        lo[j] -= eps
        numeric = (loss_at(weights, hi) - loss_at(weights, lo)) / (2 * eps)
        worst = max(worst, abs(gb[j] - numeric) / max(abs(numeric), 1e-8))
    assert worst < 1e-4, f"worst gradient relative error {worst:.2e}"

    stopper = EarlyStopper(patience=5)
    stopped_at = None
    for loss in (1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99):
        if stopper.update(loss):
            stopped_at = stopper.epoch
            break
    assert stopped_at == 7
    assert stopper.best_epoch == 2


# --------------------------------------------------------------------------
# 9. indicative real-backend check (not a gate; skips without weights/data)
# --------------------------------------------------------------------------

@criterion("real-backend-indicative")
def test_real_backend_indicative():
    manifest_path = os.environ.get("POSEPILOT_REAL_SUBSET")
    weights = os.environ.get("POSEPILOT_CLIP_WEIGHTS")
    if not manifest_path or not Path(manifest_path).exists():
        pytest.skip(
            "indicative check needs POSEPILOT_REAL_SUBSET pointing at a "
            "recreated subset manifest (and optionally POSEPILOT_CLIP_WEIGHTS)"
        )
    from posepilot.backends import EmbeddingCache, create_backend
    from posepilot.labels import task_labels
    from posepilot.prompts import builtin_by_id
    from posepilot.zeroshot import classify_manifest

    manifest = load_manifest(manifest_path)
    opts = {"weights_path": weights} if weights else {}
    backend = create_backend("clip-family", **opts)
    cache = EmbeddingCache(backend)
    accuracies = {}
    for tier in ("tier1", "tier2"):
        result = classify_manifest(
            manifest, backend, builtin_by_id()[tier],
            active_classes=task_labels("multi"), cache=cache,
        )
        pairs = [(s.true_label, s.predicted, s.abstained) for s in result.scores]
        accuracies[tier] = compute_metrics(pairs).accuracy
    print(f"[indicative] tier1 multi-class accuracy: {accuracies['tier1']:.3f}")
    print(f"[indicative] tier2 multi-class accuracy: {accuracies['tier2']:.3f}")
    print(f"[indicative] tier1 >= tier2 trend holds: "
          f"{accuracies['tier1'] >= accuracies['tier2']}")
    assert accuracies["tier1"] > 0.55


if __name__ == "__main__":
    import tempfile
    import traceback

    failures = 0
    for name, fn in ACCEPTANCE.items():
        kwargs = {}
        if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
            kwargs["tmp_path"] = Path(tempfile.mkdtemp(prefix=f"acc-{name}-"))
        try:
            fn(**kwargs)
            print(f"ACCEPTANCE {name}: PASS")
        except BaseException as exc:  # noqa: BLE001 - report and continue
            if exc.__class__.__name__ == "Skipped":
                print(f"ACCEPTANCE {name}: SKIP ({exc})")
                continue
            failures += 1
            print(f"ACCEPTANCE {name}: FAIL ({exc})")
            traceback.print_exc()
    raise SystemExit(1 if failures else 0)
