"""Temperature fitting and calibration diagnostics.

One scalar temperature divides the similarity scores before softmax; it
reshapes confidence but never the argmax. Fitting minimizes validation
NLL (smooth and unimodal in the temperature), searched by golden
section on the log-temperature axis. ECE is reported, not optimized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .labels import ClassLabel

TAU_MIN = 0.001
TAU_MAX = 1000.0
REL_TOL = 1e-6
DEFAULT_BINS = 10

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ReliabilityBin:
    confidence_lo: float
    confidence_hi: float
    mean_confidence: float | None
    empirical_accuracy: float | None
    count: int

    def to_json_obj(self) -> dict:
        return {
            "confidence_lo": self.confidence_lo,
            "confidence_hi": self.confidence_hi,
            "mean_confidence": self.mean_confidence,
            "empirical_accuracy": self.empirical_accuracy,
            "count": self.count,
        }


@dataclass(frozen=True)
class CalibrationResult:
    temperature: float
    validation_nll: float
    ece_before: float
    ece_after: float
    bins: tuple[ReliabilityBin, ...]

    def to_json_obj(self) -> dict:
        return {
            "temperature": self.temperature,
            "validation_nll": self.validation_nll,
            "ece_before": self.ece_before,
            "ece_after": self.ece_after,
            "bins": [b.to_json_obj() for b in self.bins],
        }


def _bin_index(confidence: float, n_bins: int) -> int:
    # equal-width bins over [0,1]; the last bin is closed above
    return min(int(confidence * n_bins), n_bins - 1)


def expected_calibration_error(
    predictions: Sequence[tuple[float, bool]], n_bins: int = DEFAULT_BINS
) -> float:
    """Bin-weighted mean absolute gap between confidence and accuracy.

    Computed as sum_b |correct_b - sum_conf_b| / N, which equals the
    usual (count_b/N)*|acc_b - conf_b| form exactly (in reals) and
    avoids losing the worked-example exactness to intermediate division.
    """
    if not predictions:
        raise InputError("empty prediction list")
    if n_bins < 1:
        raise InputError("n_bins must be >= 1")
    conf_sums = [[] for _ in range(n_bins)]
    correct_counts = [0] * n_bins
    for conf, correct in predictions:
        if not 0.0 <= conf <= 1.0:
            raise InputError(f"confidence {conf} outside [0,1]")
        b = _bin_index(conf, n_bins)
        conf_sums[b].append(conf)
        correct_counts[b] += bool(correct)
    gaps = [
        abs(correct_counts[b] - math.fsum(conf_sums[b])) for b in range(n_bins)
    ]
    return math.fsum(gaps) / len(predictions)


def reliability_bins(
    predictions: Sequence[tuple[float, bool]], n_bins: int = DEFAULT_BINS
) -> tuple[ReliabilityBin, ...]:
    """Equal-width reliability bins partitioning [0,1]."""
    if not predictions:
        raise InputError("empty prediction list")
    buckets: list[list[tuple[float, bool]]] = [[] for _ in range(n_bins)]
    for conf, correct in predictions:
        buckets[_bin_index(conf, n_bins)].append((conf, correct))
    bins = []
    for b, items in enumerate(buckets):
        lo, hi = b / n_bins, (b + 1) / n_bins
        if items:
            mean_conf = math.fsum(c for c, _ in items) / len(items)
            acc = sum(1 for _, k in items if k) / len(items)
            bins.append(ReliabilityBin(lo, hi, mean_conf, acc, len(items)))
        else:
            bins.append(ReliabilityBin(lo, hi, None, None, 0))
    return tuple(bins)


def mean_nll(scores: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Mean negative log-likelihood of softmax(scores / temperature)."""
    z = scores / temperature
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def _golden_section_log_tau(objective, lo: float, hi: float, tol: float) -> float:
    a, b = math.log(lo), math.log(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = objective(math.exp(c)), objective(math.exp(d))
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = objective(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = objective(math.exp(d))
    return math.exp((a + b) / 2.0)


def _confidence_pairs(
    scores: np.ndarray, labels: np.ndarray, temperature: float
) -> list[tuple[float, bool]]:
    pairs = []
    for row, label in zip(scores, labels):
        z = row / temperature
        z = z - z.max()
        p = np.exp(z)
        p = p / p.sum()
        pred = int(np.argmax(row))
        pairs.append((float(p.max()), pred == int(label)))
    return pairs


def fit_temperature(
    samples: Sequence[tuple[Sequence[float], ClassLabel | int]],
    n_bins: int = DEFAULT_BINS,
) -> CalibrationResult:
    """Fit one temperature on (similarity vector, true label) samples.

    Labels index into each similarity vector's class order. Constant
    score vectors make the likelihood flat in the temperature; that
    degenerate case warns and pins the temperature at 1.
    """
    if not samples:
        raise InputError("no calibration samples")
    scores = np.asarray([list(s) for s, _ in samples], dtype=np.float64)
    labels = np.asarray([int(lab) for _, lab in samples], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise InputError("similarities must be finite")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise InputError("label index outside score vector")
    if len(np.unique(labels)) < 2:
        raise InputError("need at least two distinct labels to calibrate")

    flat = bool(np.all(scores.max(axis=1) - scores.min(axis=1) == 0.0))
    if flat:
        warnings.warn(
            "all score vectors are constant; likelihood is flat in the "
            "temperature, returning 1.0",
            RuntimeWarning,
            stacklevel=2,
        )
        tau = 1.0
    else:
        tau = _golden_section_log_tau(
            lambda t: mean_nll(scores, labels, t), TAU_MIN, TAU_MAX, REL_TOL
        )

    before = expected_calibration_error(_confidence_pairs(scores, labels, 1.0), n_bins)
    after_pairs = _confidence_pairs(scores, labels, tau)
    after = expected_calibration_error(after_pairs, n_bins)
    return CalibrationResult(
        temperature=float(tau),
        validation_nll=mean_nll(scores, labels, tau),
        ece_before=before,
        ece_after=after,
        bins=reliability_bins(after_pairs, n_bins),
    )
