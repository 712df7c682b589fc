"""Zero-shot scoring: cosine similarities, softmax confidence, margins,
tie-breaking and margin-threshold abstention.

Class prompts may be ensembles; their embeddings are averaged and
re-normalized, which preserves the argmax of per-prompt similarity
means while letting the class be cached as a single vector. Abstained
records still carry a predicted label so coverage curves can be drawn;
the metrics layer decides how to count them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backends.base import Backend, Embedding
from .backends.cache import EmbeddingCache
from .errors import DegenerateEnsembleError, InputError
from .imageio import load_rgb, resize_rgb
from .labels import ALL_LABELS, ClassLabel
from .manifest import Manifest
from .prompts import PromptSet


@dataclass(frozen=True)
class ClassScores:
    """Per-class similarities and derived decision for one image."""

    image_id: str
    similarities: dict[ClassLabel, float]
    temperature: float
    probabilities: dict[ClassLabel, float]
    predicted: ClassLabel
    margin: float
    abstained: bool
    prompt_set_id: str
    true_label: ClassLabel | None = None

    def to_json_obj(self) -> dict:
        obj = {
            "image_id": self.image_id,
            "similarities": {lab.name: v for lab, v in self.similarities.items()},
            "temperature": self.temperature,
            "probabilities": {lab.name: v for lab, v in self.probabilities.items()},
            "predicted": self.predicted.name,
            "margin": self.margin,
            "abstained": self.abstained,
            "prompt_set_id": self.prompt_set_id,
        }
        if self.true_label is not None:
            obj["true_label"] = self.true_label.name
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ClassScores":
        return cls(
            image_id=str(obj["image_id"]),
            similarities={
                ClassLabel.from_name(k): float(v)
                for k, v in obj["similarities"].items()
            },
            temperature=float(obj["temperature"]),
            probabilities={
                ClassLabel.from_name(k): float(v)
                for k, v in obj["probabilities"].items()
            },
            predicted=ClassLabel.from_name(obj["predicted"]),
            margin=float(obj["margin"]),
            abstained=bool(obj["abstained"]),
            prompt_set_id=str(obj["prompt_set_id"]),
            true_label=(
                ClassLabel.from_name(obj["true_label"])
                if obj.get("true_label") is not None
                else None
            ),
        )


def class_embedding(prompt_embeddings: Sequence[Embedding]) -> Embedding:
    """Mean of unit vectors, re-normalized. Singleton passes through."""
    if not prompt_embeddings:
        raise InputError("empty prompt ensemble")
    dim = prompt_embeddings[0].dim
    for e in prompt_embeddings:
        if e.dim != dim:
            raise InputError(f"ensemble dim mismatch: {e.dim} vs {dim}")
        if not e.normalized:
            raise InputError("ensemble members must be unit-normalized")
    if len(prompt_embeddings) == 1:
        return prompt_embeddings[0]
    mean = np.mean(
        [e.vector.astype(np.float64) for e in prompt_embeddings], axis=0
    )
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise DegenerateEnsembleError(
            "prompt ensemble mean is the zero vector; prompts cancel out"
        )
    return Embedding.from_raw(mean)


def softmax_over(values: np.ndarray, temperature: float) -> np.ndarray:
    """Numerically stable softmax of values / temperature."""
    z = np.asarray(values, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def score(
    image_emb: Embedding,
    class_embs: dict[ClassLabel, Embedding],
    temperature: float = 1.0,
    abstain_margin: float = 0.0,
    active_classes: Sequence[ClassLabel] = ALL_LABELS,
    image_id: str = "",
    prompt_set_id: str = "",
    true_label: ClassLabel | None = None,
) -> ClassScores:
    """Score one image against class embeddings over the active classes.

    predicted = argmax cosine similarity, ties to the lowest canonical
    index; margin = top-one minus top-two similarity; abstained when the
    margin falls below `abstain_margin`.
    """
    if temperature <= 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    if abstain_margin < 0:
        raise InputError("abstain_margin must be >= 0")
    active = sorted(set(active_classes), key=int)
    if len(active) < 2:
        raise InputError("need at least two active classes")
    for lab in active:
        if lab not in class_embs:
            raise InputError(f"missing class embedding for {lab.name}")
        if class_embs[lab].dim != image_emb.dim:
            raise InputError(
                f"dim mismatch for {lab.name}: {class_embs[lab].dim} vs {image_emb.dim}"
            )

    sims = np.array([image_emb.dot(class_embs[lab]) for lab in active])
    probs = softmax_over(sims, temperature)
    best = int(np.argmax(sims))  # argmax returns the first (lowest-index) max
    top_two = np.sort(sims)[::-1][:2]
    margin = float(top_two[0] - top_two[1])
    return ClassScores(
        image_id=image_id,
        similarities={lab: float(s) for lab, s in zip(active, sims)},
        temperature=float(temperature),
        probabilities={lab: float(p) for lab, p in zip(active, probs)},
        predicted=active[best],
        margin=margin,
        abstained=bool(margin < abstain_margin),
        prompt_set_id=prompt_set_id,
        true_label=true_label,
    )


def class_embeddings_for_set(
    cache: EmbeddingCache,
    prompt_set: PromptSet,
    active_classes: Sequence[ClassLabel] = ALL_LABELS,
) -> dict[ClassLabel, Embedding]:
    """Embed each class's prompt list once and collapse to one vector."""
    out: dict[ClassLabel, Embedding] = {}
    for lab in active_classes:
        embs = cache.embed_texts(prompt_set.prompts[lab])
        out[lab] = class_embedding(embs)
    return out


@dataclass(frozen=True)
class ClassifyFailure:
    image_id: str
    error: str


@dataclass(frozen=True)
class ClassifyResult:
    scores: tuple[ClassScores, ...]
    failures: tuple[ClassifyFailure, ...]


def classify_manifest(
    manifest: Manifest,
    backend: Backend,
    prompt_set: PromptSet,
    temperature: float = 1.0,
    abstain_margin: float = 0.0,
    active_classes: Sequence[ClassLabel] = ALL_LABELS,
    cache: EmbeddingCache | None = None,
    image_loader: Callable[[str, tuple[int, int]], np.ndarray] | None = None,
) -> ClassifyResult:
    """Score every manifest record; unreadable images become failure
    entries and the run continues. Output order follows the manifest."""
    cache = cache or EmbeddingCache(backend)
    class_embs = class_embeddings_for_set(cache, prompt_set, active_classes)
    size = backend.descriptor.native_input_size
    loader = image_loader or _default_loader

    scores: list[ClassScores] = []
    failures: list[ClassifyFailure] = []
    for rec in manifest.records:
        try:
            emb = cache.embed_image(rec.image_id, lambda: loader(rec.file_path, size))
        except Exception as exc:
            failures.append(ClassifyFailure(rec.image_id, str(exc)))
            continue
        scores.append(
            score(
                emb,
                class_embs,
                temperature=temperature,
                abstain_margin=abstain_margin,
                active_classes=active_classes,
                image_id=rec.image_id,
                prompt_set_id=prompt_set.set_id,
                true_label=rec.label,
            )
        )
    return ClassifyResult(tuple(scores), tuple(failures))


def _default_loader(path: str, size: tuple[int, int]) -> np.ndarray:
    return resize_rgb(load_rgb(path), size)


def save_scores(result: ClassifyResult, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in result.scores:
            fh.write(json.dumps(s.to_json_obj(), sort_keys=True) + "\n")
        for f in result.failures:
            fh.write(
                json.dumps({"image_id": f.image_id, "error": f.error}, sort_keys=True)
                + "\n"
            )


def load_scores(path: str | Path) -> tuple[list[ClassScores], list[ClassifyFailure]]:
    scores: list[ClassScores] = []
    failures: list[ClassifyFailure] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"scores line {lineno}: malformed JSON ({exc.msg})") from None
            if "error" in obj:
                failures.append(ClassifyFailure(str(obj["image_id"]), str(obj["error"])))
            else:
                scores.append(ClassScores.from_json_obj(obj))
    return scores, failures


def similarity_matrix(scores: Sequence[ClassScores]) -> tuple[np.ndarray, list[ClassLabel]]:
    """Stack similarity vectors; column order is the canonical ordering of
    the first record's active classes."""
    if not scores:
        raise InputError("no scores")
    active = sorted(scores[0].similarities, key=int)
    mat = np.array([[s.similarities[lab] for lab in active] for s in scores])
    if not np.all(np.isfinite(mat)):
        raise InputError("non-finite similarity encountered")
    return mat, active


def margin_of(similarities: dict[ClassLabel, float]) -> float:
    vals = sorted(similarities.values(), reverse=True)
    if len(vals) < 2:
        raise InputError("margin needs at least two classes")
    return vals[0] - vals[1]


def apply_margin(scores: Sequence[ClassScores], abstain_margin: float) -> list[ClassScores]:
    """Re-derive abstention flags at a new margin threshold, no re-scoring."""
    out = []
    for s in scores:
        out.append(
            ClassScores(
                image_id=s.image_id,
                similarities=s.similarities,
                temperature=s.temperature,
                probabilities=s.probabilities,
                predicted=s.predicted,
                margin=s.margin,
                abstained=bool(s.margin < abstain_margin),
                prompt_set_id=s.prompt_set_id,
                true_label=s.true_label,
            )
        )
    return out


def is_close_to_unit(emb: Embedding, tol: float = 1e-6) -> bool:
    return math.isclose(
        float(np.linalg.norm(emb.vector.astype(np.float64))), 1.0, abs_tol=tol
    )
