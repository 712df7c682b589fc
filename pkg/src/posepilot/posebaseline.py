"""Keypoint-geometry baseline: joint angles -> deterministic posture rule.

Skeletons are 17-point COCO-order keypoints ingested from the manifest;
feature math lives in `_accel` (numba/numpy dual path). The rule checks
sitting first, then standing, and falls through to walking/running:

    sitting   if mean knee angle < sit_knee and mean hip angle < sit_hip
    standing  if mean knee angle > stand_knee and torso verticality < vert
              and ankle spread < spread
    walking_running otherwise

Angles come from whichever sides clear the confidence threshold; a record
with no usable knee angle, hip angle, torso segment, or ankle pair
abstains and counts against coverage.
"""

from __future__ import annotations

import itertools
import json
import math
import shlex
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .errors import InputError, ValidationError
from .labels import ALL_LABELS, ClassLabel
from .manifest import ImageRecord, Manifest

#: Canonical COCO keypoint names, index-aligned with skeleton rows.
KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

DEFAULT_CONF_THRESHOLD = 0.5


@dataclass(frozen=True)
class KeypointSkeleton:
    """17 (x, y, confidence) triples in canonical COCO order."""

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.points) != 17:
            raise ValidationError(f"skeleton needs 17 keypoints, got {len(self.points)}")
        for name, (_, _, c) in zip(KEYPOINT_NAMES, self.points):
            if not 0.0 <= c <= 1.0:
                raise ValidationError(f"keypoint {name}: confidence {c} outside [0,1]")

    @classmethod
    def from_flat(cls, flat: Sequence[float]) -> "KeypointSkeleton":
        if len(flat) != 51:
            raise ValidationError(f"expected 51 numbers, got {len(flat)}")
        pts = tuple(
            (float(flat[i]), float(flat[i + 1]), float(flat[i + 2]))
            for i in range(0, 51, 3)
        )
        return cls(pts)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class SkeletonFeatures:
    """Joint angles (degrees) and torso-relative ankle spread.

    NaN marks quantities whose defining keypoints fell below the
    confidence threshold or were geometrically degenerate.
    """

    knee_angle_left: float
    knee_angle_right: float
    hip_angle_left: float
    hip_angle_right: float
    torso_verticality: float
    ankle_spread: float
    usable: bool
    reason: str | None = None

    @property
    def mean_knee_angle(self) -> float:
        return _nan_side_mean(self.knee_angle_left, self.knee_angle_right)

    @property
    def mean_hip_angle(self) -> float:
        return _nan_side_mean(self.hip_angle_left, self.hip_angle_right)

    def to_row(self) -> np.ndarray:
        return np.array(
            [
                self.knee_angle_left,
                self.knee_angle_right,
                self.hip_angle_left,
                self.hip_angle_right,
                self.torso_verticality,
                self.ankle_spread,
            ],
            dtype=np.float64,
        )


def _nan_side_mean(a: float, b: float) -> float:
    if math.isnan(a) and math.isnan(b):
        return math.nan
    if math.isnan(a):
        return b
    if math.isnan(b):
        return a
    return (a + b) / 2.0


@dataclass(frozen=True)
class RuleThresholds:
    sit_knee: float = 120.0
    sit_hip: float = 120.0
    stand_knee: float = 160.0
    vert: float = 15.0
    spread: float = 0.35

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.sit_knee, self.sit_hip, self.stand_knee, self.vert, self.spread]
        )

    def to_json_obj(self) -> dict:
        return {
            "sit_knee": self.sit_knee,
            "sit_hip": self.sit_hip,
            "stand_knee": self.stand_knee,
            "vert": self.vert,
            "spread": self.spread,
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleThresholds":
        with Path(path).open("r", encoding="utf-8") as fh:
            obj = json.load(fh)
        unknown = set(obj) - {"sit_knee", "sit_hip", "stand_knee", "vert", "spread"}
        if unknown:
            raise ValidationError(f"threshold file has unknown keys {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in obj.items()})


DEFAULT_THRESHOLDS = RuleThresholds()

#: fit_thresholds search space, lexicographic in this order.
GRID_SIT_KNEE = tuple(range(90, 155, 5))
GRID_SIT_HIP = tuple(range(90, 155, 5))
GRID_STAND_KNEE = tuple(range(150, 180, 5))
GRID_VERT = tuple(range(5, 35, 5))
GRID_SPREAD = tuple(round(0.1 * k, 1) for k in range(1, 7))


def extract_features(
    sk: KeypointSkeleton, conf_threshold: float = DEFAULT_CONF_THRESHOLD
) -> SkeletonFeatures:
    """Compute angle/spread features for one skeleton."""
    row = _accel.features_batch(sk.to_array()[None, :, :], conf_threshold)[0]
    return _features_from_row(row, sk, conf_threshold)


def _features_from_row(
    row: np.ndarray, sk: KeypointSkeleton | None, conf_threshold: float
) -> SkeletonFeatures:
    knee_ok = not (math.isnan(row[0]) and math.isnan(row[1]))
    hip_ok = not (math.isnan(row[2]) and math.isnan(row[3]))
    vert_ok = not math.isnan(row[4])
    spread_ok = not math.isnan(row[5])
    usable = knee_ok and hip_ok and vert_ok and spread_ok
    reason = None
    if not usable:
        missing = []
        if not knee_ok:
            missing.append("knee angle")
        if not hip_ok:
            missing.append("hip angle")
        if not vert_ok:
            missing.append("torso segment")
        if not spread_ok:
            missing.append("ankle spread")
        if sk is not None and _any_degenerate(sk, conf_threshold):
            reason = f"degenerate geometry: no {', '.join(missing)}"
        else:
            reason = f"low-confidence keypoints: no {', '.join(missing)}"
    return SkeletonFeatures(
        knee_angle_left=float(row[0]),
        knee_angle_right=float(row[1]),
        hip_angle_left=float(row[2]),
        hip_angle_right=float(row[3]),
        torso_verticality=float(row[4]),
        ankle_spread=float(row[5]),
        usable=usable,
        reason=reason,
    )


def _any_degenerate(sk: KeypointSkeleton, conf_threshold: float) -> bool:
    pts = sk.to_array()
    ok = pts[:, 2] >= conf_threshold
    triples = ((13, 11, 15), (14, 12, 16), (11, 5, 13), (12, 6, 14))
    for b, a, c in triples:
        if ok[a] and ok[b] and ok[c]:
            if np.allclose(pts[a, :2], pts[b, :2]) or np.allclose(pts[c, :2], pts[b, :2]):
                return True
    return False


def rule_classify(
    f: SkeletonFeatures, thresholds: RuleThresholds = DEFAULT_THRESHOLDS
) -> tuple[ClassLabel | None, bool]:
    """Deterministic rule over features; (None, True) when abstaining."""
    if not f.usable:
        return None, True
    pred = int(_accel.rule_apply(f.to_row()[None, :], thresholds.to_array())[0])
    if pred < 0:
        return None, True
    return ClassLabel(pred), False


def fit_thresholds(
    train: Sequence[tuple[SkeletonFeatures, ClassLabel]],
) -> RuleThresholds:
    """Grid-search the five thresholds maximizing training macro F1.

    Only usable samples participate. Ties break toward the defaults:
    if the defaults match the best grid score they win outright, and
    among tied grid points the one nearest the defaults (L1 in grid
    steps) is chosen, earliest lexicographic point on a further tie.
    """
    usable = [(f, lab) for f, lab in train if f.usable]
    present = {lab for _, lab in usable}
    for lab in ALL_LABELS:
        if lab not in present:
            raise InputError(f"class {lab.name} has zero usable training samples")

    feats = np.stack([f.to_row() for f, _ in usable])
    labels = np.asarray([int(lab) for _, lab in usable], dtype=np.int64)

    grid = np.array(
        list(
            itertools.product(
                GRID_SIT_KNEE, GRID_SIT_HIP, GRID_STAND_KNEE, GRID_VERT, GRID_SPREAD
            )
        ),
        dtype=np.float64,
    )
    scores = _accel.grid_scores(feats, labels, grid)
    default_arr = DEFAULT_THRESHOLDS.to_array()
    default_score = float(
        _accel.grid_scores(feats, labels, default_arr[None, :])[0]
    )
    best = float(scores.max())
    if default_score >= best:
        return DEFAULT_THRESHOLDS

    steps = np.array([5.0, 5.0, 5.0, 5.0, 0.1])
    tied = np.flatnonzero(scores == best)
    dists = np.abs(grid[tied] - default_arr[None, :]) / steps
    winner = tied[int(np.argmin(dists.sum(axis=1)))]
    t = grid[winner]
    return RuleThresholds(
        sit_knee=float(t[0]),
        sit_hip=float(t[1]),
        stand_knee=float(t[2]),
        vert=float(t[3]),
        spread=float(t[4]),
    )


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    accuracy_on_covered: float | None
    n_total: int
    n_covered: int

    @property
    def degenerate(self) -> bool:
        return self.accuracy_on_covered is None


def coverage_report(
    results: Sequence[tuple[ClassLabel | None, ClassLabel]],
) -> CoverageReport:
    """Coverage (usable fraction) and accuracy on the covered subset."""
    if not results:
        raise InputError("no results to report on")
    covered = [(p, t) for p, t in results if p is not None]
    coverage = len(covered) / len(results)
    if not covered:
        return CoverageReport(0.0, None, len(results), 0)
    acc = sum(1 for p, t in covered if p == t) / len(covered)
    return CoverageReport(coverage, acc, len(results), len(covered))


# ---------------------------------------------------------------------------
# manifest-level evaluation and keypoint ingest
# ---------------------------------------------------------------------------

def features_for_records(
    records: Sequence[ImageRecord], conf_threshold: float
) -> list[SkeletonFeatures | None]:
    """Batch feature extraction; None for records without keypoints."""
    idx = [i for i, r in enumerate(records) if r.keypoints is not None]
    out: list[SkeletonFeatures | None] = [None] * len(records)
    if not idx:
        return out
    pts = np.stack(
        [np.asarray(records[i].keypoints, dtype=np.float64).reshape(17, 3) for i in idx]
    )
    rows = _accel.features_batch(pts, conf_threshold)
    for j, i in enumerate(idx):
        sk = KeypointSkeleton.from_flat(records[i].keypoints)
        out[i] = _features_from_row(rows[j], sk, conf_threshold)
    return out


def evaluate_pose_rule(
    manifest: Manifest,
    thresholds: RuleThresholds | str = "default",
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    eval_split: str | None = "test",
) -> dict:
    """Run the rule over a manifest split and report coverage + accuracy.

    `thresholds` may be a RuleThresholds, or "fit" to grid-search on the
    train split first, or "default". Records without keypoints abstain.
    """
    if isinstance(thresholds, str):
        if thresholds == "fit":
            train_recs = [r for r in manifest.records if r.split == "train"]
            if not train_recs:
                raise InputError("thresholds='fit' needs a manifest with a train split")
            pairs = [
                (f, r.label)
                for r, f in zip(
                    train_recs, features_for_records(train_recs, conf_threshold)
                )
                if f is not None
            ]
            thresholds = fit_thresholds(pairs)
        elif thresholds == "default":
            thresholds = DEFAULT_THRESHOLDS
        else:
            raise InputError(f"unknown thresholds mode {thresholds!r}")

    if eval_split is None:
        records = list(manifest.records)
    else:
        records = [r for r in manifest.records if r.split == eval_split]
        if not records:
            records = list(manifest.records)
    feats = features_for_records(records, conf_threshold)
    per_record = []
    results: list[tuple[ClassLabel | None, ClassLabel]] = []
    for rec, f in zip(records, feats):
        if f is None:
            pred, abstained = None, True
            reason = "no keypoints"
        else:
            pred, abstained = rule_classify(f, thresholds)
            reason = f.reason
        results.append((pred, rec.label))
        per_record.append(
            {
                "image_id": rec.image_id,
                "true_label": rec.label.name,
                "predicted": pred.name if pred is not None else None,
                "abstained": abstained,
                "reason": reason,
            }
        )
    cov = coverage_report(results)
    return {
        "thresholds": thresholds.to_json_obj(),
        "conf_threshold": conf_threshold,
        "coverage": cov.coverage,
        "accuracy_on_covered": cov.accuracy_on_covered,
        "n_total": cov.n_total,
        "n_covered": cov.n_covered,
        "records": per_record,
    }


def _parse_detector_output(text: str) -> list[dict]:
    payload = json.loads(text)
    if isinstance(payload, list) and payload and isinstance(payload[0], (int, float)):
        return [{"keypoints": payload}]
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise InputError("detector output must be a JSON list or object")
    return payload


def pose_ingest(
    manifest: Manifest, detector_cmd: str, timeout: float = 120.0
) -> tuple[Manifest, dict]:
    """Run an external keypoint detector and write skeletons into records.

    The command gets the image path appended (or substituted for
    "{image}") and must print JSON: either a flat 51-number list or a
    list of {"keypoints": [...], "box": [x,y,w,h]} detections. With
    several detections the largest box wins; the per-image choice goes
    into the returned audit report, not the manifest.
    """
    new_records = []
    audit: dict[str, dict] = {}
    base = shlex.split(detector_cmd)
    for rec in manifest.records:
        if "{image}" in detector_cmd:
            cmd = [part.replace("{image}", rec.file_path) for part in base]
        else:
            cmd = base + [rec.file_path]
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=timeout, check=False
        )
        if proc.returncode != 0:
            audit[rec.image_id] = {"status": "detector_failed", "stderr": proc.stderr[:500]}
            new_records.append(rec)
            continue
        detections = _parse_detector_output(proc.stdout)
        if not detections:
            audit[rec.image_id] = {"status": "no_person"}
            new_records.append(rec)
            continue
        areas = [
            float(d["box"][2]) * float(d["box"][3]) if d.get("box") else 0.0
            for d in detections
        ]
        pick = int(np.argmax(areas)) if any(a > 0 for a in areas) else 0
        kps = detections[pick].get("keypoints")
        if kps is None or len(kps) != 51:
            audit[rec.image_id] = {"status": "bad_keypoints"}
            new_records.append(rec)
            continue
        audit[rec.image_id] = {
            "status": "ok",
            "chosen_detection": pick,
            "n_detections": len(detections),
            "chosen_area": areas[pick],
        }
        new_records.append(replace(rec, keypoints=tuple(float(v) for v in kps)))
    return Manifest(tuple(new_records), manifest.resize_target), audit
