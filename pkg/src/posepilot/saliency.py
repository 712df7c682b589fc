"""Attribution-map statistics: in-person heat share and map entropy.

Maps are sum-normalized before scoring so both statistics are invariant
to positive rescaling of the raw heat. Entropy uses base-2 logs and is
normalized by log2(pixel count), which is mathematically identical to
the natural-log form and exact on power-of-two maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, PosepilotError

Rect = tuple[float, float, float, float]  # (x, y, w, h), pixels

NORMALIZATIONS = ("sum_to_one", "max_one", "raw")


class UndefinedStatisticsError(PosepilotError):
    """Statistics requested for a map with no heat mass."""


@dataclass(frozen=True)
class HeatMap:
    """Non-negative per-pixel heat, row-major (height, width)."""

    width: int
    height: int
    values: np.ndarray
    normalization: str = "raw"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError("heat map dimensions must be positive")
        if self.normalization not in NORMALIZATIONS:
            raise InputError(f"unknown normalization {self.normalization!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise InputError(
                f"values shape {v.shape} does not match (height={self.height}, width={self.width})"
            )
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InputError("heat values must be finite and non-negative")
        if self.normalization == "sum_to_one" and abs(float(v.sum()) - 1.0) > 1e-6:
            raise InputError("sum_to_one map does not sum to 1")
        if self.normalization == "max_one" and abs(float(v.max(initial=0.0)) - 1.0) > 1e-6:
            raise InputError("max_one map does not peak at 1")
        object.__setattr__(self, "values", v)

    def sum_normalized(self) -> "HeatMap":
        total = float(self.values.sum())
        if total <= 0:
            raise UndefinedStatisticsError("map has no positive heat")
        return HeatMap(self.width, self.height, self.values / total, "sum_to_one")


@dataclass(frozen=True)
class SaliencyStats:
    in_person_proportion: float
    normalized_entropy: float
    person_box: Rect
    map_size: tuple[int, int]

    def to_json_obj(self) -> dict:
        return {
            "in_person_proportion": self.in_person_proportion,
            "normalized_entropy": self.normalized_entropy,
            "person_box": list(self.person_box),
            "map_size": list(self.map_size),
        }


def _box_mask(width: int, height: int, box: Rect) -> np.ndarray:
    """Pixel membership by center point, half-open box intervals."""
    x, y, w, h = box
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    in_x = (cx >= x) & (cx < x + w)
    in_y = (cy >= y) & (cy < y + h)
    return in_y[:, None] & in_x[None, :]


def stats(heat: HeatMap, person_box: Rect) -> SaliencyStats:
    """In-box heat proportion and normalized entropy of a map."""
    x, y, w, h = person_box
    if w <= 0 or h <= 0:
        raise InputError("person_box must have positive size")
    if x + w <= 0 or y + h <= 0 or x >= heat.width or y >= heat.height:
        raise InputError("person_box does not intersect the map")
    norm = heat.sum_normalized()
    p = norm.values
    mask = _box_mask(heat.width, heat.height, person_box)
    proportion = float(p[mask].sum())

    n_pixels = heat.width * heat.height
    if n_pixels == 1:
        entropy = 0.0
    else:
        pos = p[p > 0]
        raw = float(-(pos * np.log2(pos)).sum())
        entropy = raw / float(np.log2(n_pixels))
    return SaliencyStats(proportion, entropy, person_box, (heat.width, heat.height))


def compare_across_prompts(
    image: np.ndarray,
    backend,
    prompts: Sequence[str],
    person_box: Rect,
) -> list[SaliencyStats]:
    """Attribution stats per prompt, order preserved."""
    return [stats(backend.attribute(image, prompt), person_box) for prompt in prompts]


def save_overlay(image: np.ndarray, heat: HeatMap, path: str | Path) -> None:
    """Blend heat over the image and write an 8-bit PNG."""
    from PIL import Image

    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.shape[:2] != (heat.height, heat.width):
        pil = Image.fromarray(np.asarray(image, dtype=np.uint8)).resize(
            (heat.width, heat.height), Image.BILINEAR
        )
        img = np.asarray(pil, dtype=np.float64)
    peak = float(heat.values.max(initial=0.0))
    h = heat.values / peak if peak > 0 else heat.values
    colored = np.stack([255.0 * h, 128.0 * h, np.zeros_like(h)], axis=-1)
    blended = np.clip(0.55 * img + 0.45 * colored, 0, 255).astype(np.uint8)
    Image.fromarray(blended).save(Path(path), format="PNG")
