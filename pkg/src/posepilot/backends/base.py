"""Backend interface: image/text encoders producing unit vectors."""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InputError
from ..saliency import HeatMap

NORM_TOL = 1e-6


@dataclass(frozen=True)
class Embedding:
    """Unit-normalized float32 vector. Immutable, freely shareable."""

    vector: np.ndarray
    dim: int
    normalized: bool = True

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise InputError(f"embedding shape {v.shape} does not match dim {self.dim}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if self.normalized:
            norm = float(np.linalg.norm(v.astype(np.float64)))
            if abs(norm - 1.0) > NORM_TOL:
                raise InputError(f"embedding marked normalized but |v|={norm}")

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "Embedding":
        """Project any non-zero vector onto the unit sphere (float32)."""
        v = np.asarray(raw, dtype=np.float64).ravel()
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise InputError("cannot normalize the zero vector")
        return cls((v / norm).astype(np.float32), v.shape[0])

    def dot(self, other: "Embedding") -> float:
        if self.dim != other.dim:
            raise InputError(f"dim mismatch: {self.dim} vs {other.dim}")
        return float(
            np.dot(self.vector.astype(np.float64), other.vector.astype(np.float64))
        )


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    embedding_dim: int
    native_input_size: tuple[int, int]
    supports_attribution: bool = False

    def __post_init__(self):
        if self.native_input_size[0] <= 0 or self.native_input_size[1] <= 0:
            raise InputError("native_input_size must be positive")


@dataclass
class InvocationCounter:
    """Counts calls that actually reach the encoder (cache misses only)."""

    image_calls: int = 0
    text_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add_images(self, n: int = 1) -> None:
        with self._lock:
            self.image_calls += n

    def add_texts(self, n: int = 1) -> None:
        with self._lock:
            self.text_calls += n


class Backend(ABC):
    """Encoder adapter. Instances are internally synchronized; callers may
    share one across threads."""

    descriptor: BackendDescriptor

    def __init__(self):
        self.counter = InvocationCounter()
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.descriptor.name

    def embed_image(self, image: np.ndarray) -> Embedding:
        image = np.asarray(image)
        if image.size == 0:
            raise InputError("empty image")
        with self._lock:
            self.counter.add_images()
            return self._embed_image(image)

    def embed_texts(self, prompts: Sequence[str]) -> list[Embedding]:
        if not prompts:
            raise InputError("prompts list is empty")
        for p in prompts:
            if not p or not p.strip():
                raise InputError("blank prompt")
        with self._lock:
            self.counter.add_texts(len(prompts))
            return self._embed_texts(list(prompts))

    def attribute(self, image: np.ndarray, prompt: str) -> HeatMap:
        from ..errors import CapabilityError

        if not self.descriptor.supports_attribution:
            raise CapabilityError(self.name, "backend does not support attribution")
        with self._lock:
            return self._attribute(np.asarray(image), prompt)

    @abstractmethod
    def _embed_image(self, image: np.ndarray) -> Embedding: ...

    @abstractmethod
    def _embed_texts(self, prompts: list[str]) -> list[Embedding]: ...

    def _attribute(self, image: np.ndarray, prompt: str) -> HeatMap:
        raise NotImplementedError
