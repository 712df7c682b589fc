"""Embedding caches: in-memory maps with an optional content-addressed
disk store (float32 little-endian vectors plus a plain-text index)."""

from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import quote, unquote

import numpy as np

from .base import Backend, Embedding

ENV_CACHE_DIR = "POSEPILOT_CACHE_DIR"


def default_cache_dir() -> Path | None:
    value = os.environ.get(ENV_CACHE_DIR)
    return Path(value) if value else None


class DiskVectorStore:
    """Append-only keyed float32 vectors: `vectors.bin` holds raw
    little-endian data, `index.txt` lines are '<quoted-key> <offset> <dim>'."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._index_path = self.dir / "index.txt"
        self._data_path = self.dir / "vectors.bin"
        self._lock = threading.Lock()
        self._offsets: dict[str, tuple[int, int]] = {}
        if self._index_path.exists():
            for line in self._index_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                key, offset, dim = line.rsplit(" ", 2)
                self._offsets[unquote(key)] = (int(offset), int(dim))

    def __contains__(self, key: str) -> bool:
        return key in self._offsets

    def get(self, key: str) -> np.ndarray | None:
        entry = self._offsets.get(key)
        if entry is None:
            return None
        offset, dim = entry
        with self._data_path.open("rb") as fh:
            fh.seek(offset)
            buf = fh.read(4 * dim)
        return np.frombuffer(buf, dtype="<f4").copy()

    def put(self, key: str, vector: np.ndarray) -> None:
        data = np.asarray(vector, dtype="<f4").tobytes()
        with self._lock:
            if key in self._offsets:
                return
            with self._data_path.open("ab") as fh:
                offset = fh.tell()
                fh.write(data)
            with self._index_path.open("a", encoding="utf-8") as fh:
                fh.write(f"{quote(key, safe='')} {offset} {len(vector)}\n")
            self._offsets[key] = (offset, len(vector))


def _prompt_key(prompt: str) -> str:
    return "txt-" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Per-backend cache for text and image embeddings.

    Keyed by exact prompt string (no normalization: wording is the
    experimental variable) and by image_id. Only misses reach the
    backend, which keeps its invocation counter meaningful.
    """

    def __init__(self, backend: Backend, cache_dir: str | Path | None = None):
        self.backend = backend
        self._texts: dict[str, Embedding] = {}
        self._images: dict[str, Embedding] = {}
        self._lock = threading.Lock()
        cache_dir = cache_dir if cache_dir is not None else default_cache_dir()
        self._disk: DiskVectorStore | None = None
        if cache_dir is not None:
            self._disk = DiskVectorStore(Path(cache_dir) / backend.name)

    def _from_disk(self, key: str) -> Embedding | None:
        if self._disk is None:
            return None
        vec = self._disk.get(key)
        if vec is None:
            return None
        return Embedding(vec, vec.shape[0])

    def _to_disk(self, key: str, emb: Embedding) -> None:
        if self._disk is not None:
            self._disk.put(key, emb.vector)

    def embed_texts(self, prompts: Sequence[str]) -> list[Embedding]:
        """Embeddings for prompts in order, computing only the misses."""
        with self._lock:
            missing: list[str] = []
            for p in prompts:
                if p in self._texts or p in missing:
                    continue
                disk_hit = self._from_disk(_prompt_key(p))
                if disk_hit is not None:
                    self._texts[p] = disk_hit
                else:
                    missing.append(p)
        if missing:
            embs = self.backend.embed_texts(missing)
            with self._lock:
                for p, e in zip(missing, embs):
                    self._texts[p] = e
                    self._to_disk(_prompt_key(p), e)
        return [self._texts[p] for p in prompts]

    def embed_image(
        self, image_id: str, loader: Callable[[], np.ndarray]
    ) -> Embedding:
        """Embedding for one image, loading pixels only on a miss."""
        with self._lock:
            hit = self._images.get(image_id)
            if hit is None:
                hit = self._from_disk("img-" + image_id)
                if hit is not None:
                    self._images[image_id] = hit
        if hit is not None:
            return hit
        emb = self.backend.embed_image(loader())
        with self._lock:
            self._images[image_id] = emb
            self._to_disk("img-" + image_id, emb)
        return emb
