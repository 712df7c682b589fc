from .base import Backend, BackendDescriptor, Embedding
from .cache import EmbeddingCache, default_cache_dir
from .mock import MockBackend
from .registry import available_backends, create_backend, register_backend

__all__ = [
    "Backend",
    "BackendDescriptor",
    "Embedding",
    "EmbeddingCache",
    "MockBackend",
    "available_backends",
    "create_backend",
    "register_backend",
    "default_cache_dir",
]
