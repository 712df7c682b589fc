"""Evaluation metrics: accuracy, macro P/R/F1, confusion, coverage.

Macro F1 is the unweighted mean of per-class F1 (not the F1 of mean P
and mean R). Undefined per-class precision or recall scores 0 and the
class is flagged degenerate instead of aborting the run. Abstained
pairs are excluded by default; with include_abstained they count as
errors (a miss for their true class) while staying out of the
confusion matrix, whose total equals the evaluated records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .labels import ALL_LABELS, ClassLabel

Pair = tuple[ClassLabel, ClassLabel, bool]  # (true, predicted, abstained)


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[ClassLabel, ...]
    counts: np.ndarray  # rows = true, columns = predicted

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if c.shape != (n, n):
            raise InputError(f"confusion shape {c.shape} != ({n},{n})")
        if np.any(c < 0):
            raise InputError("confusion counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json_obj(self) -> dict:
        return {
            "labels": [lab.name for lab in self.labels],
            "counts": self.counts.tolist(),
        }


@dataclass(frozen=True)
class MetricsReport:
    task: str
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_f1: dict[ClassLabel, float]
    confusion: ConfusionMatrix
    coverage: float
    n_evaluated: int
    n_abstained: int
    degenerate_classes: tuple[ClassLabel, ...] = ()

    def to_json_obj(self) -> dict:
        return {
            "task": self.task,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_f1": {lab.name: v for lab, v in self.per_class_f1.items()},
            "confusion": self.confusion.to_json_obj(),
            "coverage": self.coverage,
            "n_evaluated": self.n_evaluated,
            "n_abstained": self.n_abstained,
            "degenerate_classes": [lab.name for lab in self.degenerate_classes],
        }


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(
    pairs: Sequence[Pair],
    labels: Sequence[ClassLabel] = ALL_LABELS,
    include_abstained: bool = False,
) -> MetricsReport:
    """Aggregate (true, predicted, abstained) triples into a report."""
    if not pairs:
        raise InputError("no pairs to evaluate")
    labels = tuple(labels)
    label_set = set(labels)
    for true, pred, _ in pairs:
        if true not in label_set or pred not in label_set:
            raise InputError(
                f"pair ({true.name}, {pred.name}) outside class set "
                f"{[l.name for l in labels]}"
            )

    evaluated = [(t, p) for t, p, a in pairs if not a]
    abstained = [(t, p) for t, p, a in pairs if a]
    if not evaluated and not include_abstained:
        raise InputError("all pairs abstained and include_abstained is false")

    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in evaluated:
        counts[index[t], index[p]] += 1

    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    if include_abstained:
        for t, _ in abstained:
            fn[index[t]] += 1

    precisions, recalls, f1s = [], [], []
    degenerate: list[ClassLabel] = []
    for i, lab in enumerate(labels):
        prec, p_deg = _safe_div(tp[i], tp[i] + fp[i])
        rec, r_deg = _safe_div(tp[i], tp[i] + fn[i])
        f1, _ = _safe_div(2 * prec * rec, prec + rec)
        if p_deg or r_deg:
            degenerate.append(lab)
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)

    denominator = len(pairs) if include_abstained else len(evaluated)
    correct = int(tp.sum())
    n_evaluated, n_abstained = len(evaluated), len(abstained)
    return MetricsReport(
        task="binary" if k == 2 else "multi",
        accuracy=correct / denominator,
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        per_class_f1={lab: f1s[i] for i, lab in enumerate(labels)},
        confusion=ConfusionMatrix(labels, counts),
        coverage=n_evaluated / (n_evaluated + n_abstained),
        n_evaluated=n_evaluated,
        n_abstained=n_abstained,
        degenerate_classes=tuple(degenerate),
    )


def f1_for_class(
    pairs: Sequence[tuple[ClassLabel, ClassLabel]], target: ClassLabel
) -> tuple[float, bool]:
    """One-vs-rest F1 for `target`; (0.0, True) when undefined."""
    if not pairs:
        raise InputError("no pairs")
    tp = sum(1 for t, p in pairs if t == target and p == target)
    fp = sum(1 for t, p in pairs if t != target and p == target)
    fn = sum(1 for t, p in pairs if t == target and p != target)
    den = 2 * tp + fp + fn
    if den == 0:
        return 0.0, True
    return 2 * tp / den, False


def format_value(x: float) -> str:
    """Fixed two-decimal rendering (round half to even), as in reports."""
    return f"{x:.2f}"


def report_table_row(name: str, report: MetricsReport) -> str:
    return "  ".join(
        [
            f"{name:<18}",
            format_value(report.accuracy),
            format_value(report.macro_precision),
            format_value(report.macro_recall),
            format_value(report.macro_f1),
        ]
    )


def render_report_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    header = f"{'Model':<18}  Acc.  Prec.  Rec.  F1"
    lines = [header, "-" * len(header)]
    lines += [report_table_row(name, rep) for name, rep in rows]
    return "\n".join(lines)


def save_report(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_json(report: MetricsReport) -> str:
    """Canonical machine form, shared by the CLI and the HTTP service."""
    return json.dumps(report.to_json_obj(), sort_keys=True, separators=(",", ":"))
