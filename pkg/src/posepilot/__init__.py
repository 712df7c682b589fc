"""posepilot: zero-shot posture classification and prompt diagnostics."""

from .labels import ALL_LABELS, ClassLabel, task_labels

__version__ = "0.1.0"

__all__ = ["ALL_LABELS", "ClassLabel", "task_labels", "__version__"]
