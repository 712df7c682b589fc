"""Labeled image manifests: JSONL loading, stratified splits, EDA stats.

A manifest is one JSON object per line. The schema is closed: unknown
fields are rejected so that typos in hand-edited manifests fail loudly
instead of silently dropping information.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestError, ValidationError
from .labels import ALL_LABELS, ClassLabel

SPLITS = ("train", "val", "test", "unassigned")

_RECORD_FIELDS = {
    "image_id",
    "file_path",
    "label",
    "split",
    "person_box",
    "keypoints",
    "width_px",
    "height_px",
}


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image. `person_box` is (x, y, w, h) in pixels; `keypoints`
    is the flat 17x(x, y, confidence) skeleton when a pose detector ran."""

    image_id: str
    file_path: str
    label: ClassLabel
    width_px: int
    height_px: int
    split: str = "unassigned"
    person_box: tuple[float, float, float, float] | None = None
    keypoints: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValidationError(
                f"{self.image_id}: width_px/height_px must be positive"
            )
        if self.split not in SPLITS:
            raise ValidationError(f"{self.image_id}: unknown split {self.split!r}")
        if self.person_box is not None:
            x, y, w, h = self.person_box
            if w < 0 or h < 0:
                raise ValidationError(f"{self.image_id}: person_box has negative size")
            if x < 0 or y < 0 or x + w > self.width_px or y + h > self.height_px:
                raise ValidationError(
                    f"{self.image_id}: person_box {self.person_box} outside "
                    f"[0,{self.width_px}]x[0,{self.height_px}]"
                )
        if self.keypoints is not None and len(self.keypoints) != 51:
            raise ValidationError(
                f"{self.image_id}: keypoints must have 51 numbers, got {len(self.keypoints)}"
            )

    def to_json_obj(self) -> dict:
        obj: dict = {
            "image_id": self.image_id,
            "file_path": self.file_path,
            "label": self.label.name,
            "width_px": self.width_px,
            "height_px": self.height_px,
        }
        if self.split != "unassigned":
            obj["split"] = self.split
        if self.person_box is not None:
            obj["person_box"] = list(self.person_box)
        if self.keypoints is not None:
            obj["keypoints"] = list(self.keypoints)
        return obj


@dataclass(frozen=True)
class Manifest:
    """Immutable ordered collection of records plus derived class counts."""

    records: tuple[ImageRecord, ...]
    resize_target: tuple[int, int] = (224, 224)
    class_counts: dict[ClassLabel, int] = field(init=False, compare=False)

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if rec.image_id in seen:
                raise ValidationError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
        counts = Counter(rec.label for rec in self.records)
        object.__setattr__(
            self, "class_counts", {lab: counts.get(lab, 0) for lab in ALL_LABELS}
        )

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> "Manifest":
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return Manifest(
            tuple(r for r in self.records if r.split == split), self.resize_target
        )

    def get(self, image_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)


def _parse_record(obj: dict, lineno: int) -> ImageRecord:
    unknown = set(obj) - _RECORD_FIELDS
    if unknown:
        raise ManifestError(f"line {lineno}: unknown fields {sorted(unknown)}")
    missing = {"image_id", "file_path", "label", "width_px", "height_px"} - set(obj)
    if missing:
        raise ManifestError(f"line {lineno}: missing fields {sorted(missing)}")
    try:
        label = ClassLabel.from_name(obj["label"])
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None
    box = obj.get("person_box")
    kps = obj.get("keypoints")
    try:
        return ImageRecord(
            image_id=str(obj["image_id"]),
            file_path=str(obj["file_path"]),
            label=label,
            width_px=int(obj["width_px"]),
            height_px=int(obj["height_px"]),
            split=obj.get("split", "unassigned"),
            person_box=tuple(float(v) for v in box) if box is not None else None,
            keypoints=tuple(float(v) for v in kps) if kps is not None else None,
        )
    except (ValidationError, TypeError, ValueError) as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None


def load_manifest(path: str | Path) -> Manifest:
    """Load and validate a JSONL manifest, preserving record order.

    Raises ManifestError naming the offending line for malformed JSON,
    unknown labels/fields, or duplicate image ids.
    """
    path = Path(path)
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: expected an object")
            rec = _parse_record(obj, lineno)
            if rec.image_id in seen:
                raise ManifestError(
                    f"line {lineno}: duplicate image_id {rec.image_id!r}"
                )
            seen.add(rec.image_id)
            records.append(rec)
    return Manifest(tuple(records))


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json_obj(), sort_keys=True) + "\n")


def largest_remainder_allocation(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer allocation of n items to len(fractions) buckets.

    Floors each target, then hands out the remaining items by descending
    fractional remainder, earlier bucket winning ties. Guarantees
    |allocated - n*fraction| < 1 for every bucket.
    """
    targets = [n * f for f in fractions]
    floors = [math.floor(t) for t in targets]
    leftover = n - sum(floors)
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(targets[i] - floors[i]), i)
    )
    for i in remainders[:leftover]:
        floors[i] += 1
    return floors


def stratified_split(
    manifest: Manifest,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Manifest:
    """Assign every record to train/val/test, stratified per class.

    Per-class counts come from largest-remainder rounding of the fractions;
    membership comes from a seeded shuffle of each class's records. The
    result is a pure function of (manifest, fractions, seed).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions {fractions} do not sum to 1")
    if len(fractions) != 3:
        raise ValidationError("expected exactly three fractions (train, val, test)")
    for lab, count in manifest.class_counts.items():
        if count < 3:
            raise ValidationError(
                f"class {lab.name} has {count} records; need >= 3 to populate all splits"
            )

    rng = np.random.Generator(np.random.PCG64(seed))
    assignment: dict[str, str] = {}
    for lab in ALL_LABELS:
        ids = [r.image_id for r in manifest.records if r.label == lab]
        order = rng.permutation(len(ids))
        n_train, n_val, n_test = largest_remainder_allocation(len(ids), fractions)
        for pos, idx in enumerate(order):
            if pos < n_train:
                split = "train"
            elif pos < n_train + n_val:
                split = "val"
            else:
                split = "test"
            assignment[ids[idx]] = split

    records = tuple(
        replace(rec, split=assignment[rec.image_id]) for rec in manifest.records
    )
    return Manifest(records, manifest.resize_target)


@dataclass(frozen=True)
class EdaSummary:
    """Raw-size histogram and per-class aspect-ratio quartiles."""

    size_counts: dict[str, int]
    aspect_quartiles: dict[ClassLabel, tuple[float, float, float] | None]
    n_records: int

    def to_json_obj(self) -> dict:
        return {
            "n_records": self.n_records,
            "size_counts": self.size_counts,
            "aspect_quartiles": {
                lab.name: list(q) if q is not None else None
                for lab, q in self.aspect_quartiles.items()
            },
        }


def eda_stats(manifest: Manifest) -> EdaSummary:
    """Summarize raw image sizes and width/height ratios per class.

    Sizes are binned by exact (width, height) pair; quartiles use linear
    interpolation on the sorted ratios (numpy default). Classes without
    records report None quartiles.
    """
    if len(manifest) == 0:
        raise ValidationError("manifest is empty")
    sizes = Counter(f"{r.width_px}x{r.height_px}" for r in manifest.records)
    quartiles: dict[ClassLabel, tuple[float, float, float] | None] = {}
    for lab in ALL_LABELS:
        ratios = [
            r.width_px / r.height_px for r in manifest.records if r.label == lab
        ]
        if not ratios:
            quartiles[lab] = None
            continue
        q1, q2, q3 = np.quantile(np.asarray(ratios, dtype=np.float64), [0.25, 0.5, 0.75])
        quartiles[lab] = (float(q1), float(q2), float(q3))
    return EdaSummary(dict(sorted(sizes.items())), quartiles, len(manifest))


def records_from_iter(records: Iterable[ImageRecord]) -> Manifest:
    return Manifest(tuple(records))
