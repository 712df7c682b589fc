"""Exception hierarchy shared across the toolkit."""


class PosepilotError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(PosepilotError):
    """Malformed or inconsistent manifest data."""


class ValidationError(PosepilotError):
    """Structurally invalid input (bad labels, blank prompts, ...)."""


class InputError(PosepilotError):
    """A well-formed call with arguments outside the operation's domain."""


class BackendError(PosepilotError):
    """Failure inside an encoder backend; carries the backend name."""

    def __init__(self, backend: str, message: str):
        super().__init__(f"[{backend}] {message}")
        self.backend = backend


class CapabilityError(BackendError):
    """Backend asked to do something it does not support (e.g. attribution)."""


class DegenerateEnsembleError(PosepilotError):
    """Prompt ensemble whose mean embedding is the zero vector."""
