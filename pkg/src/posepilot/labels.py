"""Posture class labels and their canonical ordering.

The ordering (sitting=0, standing=1, walking_running=2) is load-bearing:
tie-breaking in the scorer, confusion-matrix axes, and report rows all
follow it. Every module imports the order from here instead of redefining.
"""

from __future__ import annotations

from enum import IntEnum


class ClassLabel(IntEnum):
    sitting = 0
    standing = 1
    walking_running = 2

    def __str__(self) -> str:
        return self.name

    @classmethod
    def from_name(cls, name: str) -> "ClassLabel":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(
                f"unknown label {name!r}; expected one of {[l.name for l in cls]}"
            ) from None


#: All labels in canonical order.
ALL_LABELS: tuple[ClassLabel, ...] = tuple(ClassLabel)

#: Active classes for the two evaluation tasks. The binary task drops
#: `standing` and keeps the two visually distinct postures.
TASK_CLASSES: dict[str, tuple[ClassLabel, ...]] = {
    "multi": ALL_LABELS,
    "binary": (ClassLabel.sitting, ClassLabel.walking_running),
}


def task_labels(task: str) -> tuple[ClassLabel, ...]:
    from .errors import InputError

    if task not in TASK_CLASSES:
        raise InputError(f"unknown task {task!r}; expected one of {sorted(TASK_CLASSES)}")
    return TASK_CLASSES[task]
