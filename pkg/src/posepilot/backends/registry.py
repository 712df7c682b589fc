"""Name-based backend registry. Lookup fails loudly on unknown names."""

from __future__ import annotations

from typing import Callable

from ..errors import InputError
from .base import Backend

_FACTORIES: dict[str, Callable[..., Backend]] = {}


def register_backend(name: str, factory: Callable[..., Backend]) -> None:
    if name in _FACTORIES:
        raise InputError(f"backend {name!r} already registered")
    _FACTORIES[name] = factory


def available_backends() -> list[str]:
    return sorted(_FACTORIES)


def create_backend(name: str, **options) -> Backend:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise InputError(
            f"unknown backend {name!r}; registered: {available_backends()}"
        ) from None
    return factory(**options)


def _register_builtin():
    from .hf import HFDualEncoderBackend
    from .mock import MockBackend

    register_backend("mock", lambda **opts: MockBackend(**opts))
    for family in ("clip-family", "metaclip-family", "siglip-family"):
        register_backend(
            family,
            lambda name=family, **opts: HFDualEncoderBackend(name, **opts),
        )


_register_builtin()
