"""Deterministic mock encoder for weight-free pipeline and property tests.

Embeddings are pseudo-random unit vectors drawn from a PCG64 stream
seeded by a 64-bit content hash, so the backend is a pure function of
input bytes and the fixed stream constant below.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..saliency import HeatMap
from .base import Backend, BackendDescriptor, Embedding

#: Global seed constant mixed into every content hash.
STREAM_CONSTANT = b"posepilot-mock-v1"


def _content_seed(payload: bytes) -> int:
    digest = hashlib.blake2b(payload, digest_size=8, key=STREAM_CONSTANT)
    return int.from_bytes(digest.digest(), "little")


class MockBackend(Backend):
    def __init__(self, embedding_dim: int = 64, grid_size: int = 7):
        super().__init__()
        self.descriptor = BackendDescriptor(
            name="mock",
            embedding_dim=embedding_dim,
            native_input_size=(224, 224),
            supports_attribution=True,
        )
        self._grid_size = grid_size

    def _pseudo_embedding(self, payload: bytes) -> Embedding:
        rng = np.random.Generator(np.random.PCG64(_content_seed(payload)))
        raw = rng.standard_normal(self.descriptor.embedding_dim)
        return Embedding.from_raw(raw)

    def _embed_image(self, image: np.ndarray) -> Embedding:
        arr = np.ascontiguousarray(image)
        payload = b"image:" + repr(arr.shape).encode() + arr.tobytes()
        return self._pseudo_embedding(payload)

    def _embed_texts(self, prompts: list[str]) -> list[Embedding]:
        return [
            self._pseudo_embedding(b"text:" + p.encode("utf-8")) for p in prompts
        ]

    def _attribute(self, image: np.ndarray, prompt: str) -> HeatMap:
        # Synthetic attribution: a center-weighted kernel on the spatial
        # grid, upsampled to image size and max-normalized. Enough to
        # exercise saliency plumbing without weights.
        from PIL import Image

        g = self._grid_size
        coords = (np.arange(g) - (g - 1) / 2.0) / g
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        kernel = np.exp(-(xx**2 + yy**2) / (2 * 0.15**2))
        height, width = image.shape[0], image.shape[1]
        pil = Image.fromarray(kernel.astype(np.float32), mode="F").resize(
            (width, height), Image.BILINEAR
        )
        up = np.asarray(pil, dtype=np.float64)
        up = np.maximum(up, 0.0)
        up /= up.max()
        return HeatMap(width, height, up, "max_one")
