"""Image decode and resize helpers (Pillow-backed)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InputError


def load_rgb(path: str | Path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array (H, W, 3)."""
    from PIL import Image, UnidentifiedImageError

    path = Path(path)
    if not path.exists():
        raise InputError(f"image file not found: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError:
        raise InputError(f"cannot decode image: {path}") from None


def resize_rgb(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Plain bilinear resize to (width, height); no aspect-preserving crop."""
    from PIL import Image

    if image.shape[:2] == (size[1], size[0]):
        return image
    pil = Image.fromarray(np.asarray(image, dtype=np.uint8))
    return np.asarray(pil.resize(size, Image.BILINEAR), dtype=np.uint8)
