"""Build a posture manifest from COCO-style annotation files.

COCO itself has no posture labels; curation supplies them as a separate
mapping from image id (or file name) to class name. Only mapped images
enter the manifest, so the label file doubles as the subset selection.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import InputError, ValidationError
from .labels import ClassLabel
from .manifest import ImageRecord, Manifest


def _person_category_ids(coco: dict) -> set[int]:
    cats = coco.get("categories", [])
    ids = {c["id"] for c in cats if c.get("name") == "person"}
    if not ids and cats:
        raise InputError("annotation file has categories but none named 'person'")
    return ids or {1}


def _visibility_to_confidence(kps: list[float]) -> tuple[float, ...]:
    # COCO visibility flags are 0 (unlabeled), 1 (occluded), 2 (visible);
    # map them onto [0,1] confidences as v/2.
    out = list(kps)
    for i in range(2, len(out), 3):
        out[i] = out[i] / 2.0
    return tuple(float(v) for v in out)


def load_labels_file(path: str | Path) -> dict[str, ClassLabel]:
    """Read the curation mapping: JSON object of image key -> label name."""
    with Path(path).open("r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InputError("labels file must be a JSON object of image -> label")
    return {str(k): ClassLabel.from_name(v) for k, v in raw.items()}


def ingest_coco(
    annotations_path: str | Path,
    images_dir: str | Path,
    labels: dict[str, ClassLabel],
) -> Manifest:
    """Assemble a manifest from COCO annotations and a curation mapping.

    Keeps one record per labeled image that has at least one annotated
    person; the person box and keypoints (when present) come from the
    largest-area detection. Label keys may be numeric image ids or file
    names. Missing image files are tolerated here; classification checks
    readability at embed time.
    """
    annotations_path = Path(annotations_path)
    images_dir = Path(images_dir)
    with annotations_path.open("r", encoding="utf-8") as fh:
        coco = json.load(fh)
    person_cats = _person_category_ids(coco)

    by_image: dict[int, list[dict]] = {}
    for ann in coco.get("annotations", []):
        if ann.get("category_id") in person_cats:
            by_image.setdefault(ann["image_id"], []).append(ann)

    records: list[ImageRecord] = []
    for img in coco.get("images", []):
        image_id = str(img["id"])
        file_name = img.get("file_name", "")
        label = labels.get(image_id, labels.get(file_name))
        if label is None:
            continue
        persons = by_image.get(img["id"], [])
        if not persons:
            continue
        largest = max(persons, key=lambda a: a.get("bbox", [0, 0, 0, 0])[2] * a.get("bbox", [0, 0, 0, 0])[3])
        bbox = largest.get("bbox")
        width, height = int(img["width"]), int(img["height"])
        box = None
        if bbox and bbox[2] > 0 and bbox[3] > 0:
            x = min(max(float(bbox[0]), 0.0), width)
            y = min(max(float(bbox[1]), 0.0), height)
            w = min(float(bbox[2]), width - x)
            h = min(float(bbox[3]), height - y)
            box = (x, y, w, h)
        kps = largest.get("keypoints")
        keypoints = None
        if kps is not None:
            if len(kps) != 51:
                raise ValidationError(
                    f"image {image_id}: expected 51 keypoint numbers, got {len(kps)}"
                )
            keypoints = _visibility_to_confidence(list(kps))
        records.append(
            ImageRecord(
                image_id=image_id,
                file_path=str(images_dir / file_name),
                label=label,
                width_px=width,
                height_px=height,
                person_box=box,
                keypoints=keypoints,
            )
        )
    return Manifest(tuple(records))
