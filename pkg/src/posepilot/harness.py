"""Experiment orchestration: backend x prompt-tier x task sweeps with
multi-seed probes, shared embedding caches, and table rendering.

Zero-shot cells are pure given embeddings, so they are evaluated once
and replicated across seeds (sd 0 by construction); probe cells retrain
per seed. Cell failures are recorded and the sweep continues.
"""

from __future__ import annotations

import json
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .backends.cache import EmbeddingCache
from .backends.registry import create_backend
from .calibration import CalibrationResult, fit_temperature
from .errors import InputError, PosepilotError
from .labels import ClassLabel, task_labels
from .manifest import Manifest
from .metrics import MetricsReport, compute_metrics, format_value
from .probe import ProbeConfig, train_linear_probe
from .prompts import PromptSet, builtin_by_id
from .zeroshot import ClassifyResult, classify_manifest, save_scores

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CALIBRATION_POLICIES = ("fixed_tier1", "per_tier", "none")


@dataclass(frozen=True)
class ExperimentConfig:
    backends: tuple[str, ...]
    prompt_sets: tuple[str, ...] = ("tier1", "tier2", "tier3")
    tasks: tuple[str, ...] = ("binary", "multi")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    calibration_policy: str = "fixed_tier1"
    abstain_margin: float = 0.0
    include_probe: bool = True
    evaluate_on: str = "test"
    probe: ProbeConfig = ProbeConfig()
    backend_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.backends or not self.prompt_sets or not self.tasks or not self.seeds:
            raise InputError("backends, prompt_sets, tasks and seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError("seeds must be distinct")
        if self.calibration_policy not in CALIBRATION_POLICIES:
            raise InputError(
                f"calibration_policy must be one of {CALIBRATION_POLICIES}"
            )
        if self.evaluate_on not in ("test", "full"):
            raise InputError("evaluate_on must be 'test' or 'full'")
        for task in self.tasks:
            task_labels(task)

    @classmethod
    def from_toml(cls, path: str | Path) -> "ExperimentConfig":
        with Path(path).open("rb") as fh:
            doc = tomllib.load(fh)
        exp = doc.get("experiment", {})
        probe_cfg = ProbeConfig(**doc.get("probe", {}))
        # [backend] supports either one `name`/`weights_path` pair or
        # per-backend sub-tables ([backend.clip-family] weights_path = ...)
        backend_tbl = dict(doc.get("backend", {}))
        default_backends: tuple[str, ...] = ()
        if isinstance(backend_tbl.get("name"), str):
            name = backend_tbl.pop("name")
            backend_tbl = {name: backend_tbl}
            default_backends = (name,)
        return cls(
            backends=tuple(exp.get("backends", default_backends)),
            prompt_sets=tuple(exp.get("prompt_sets", ("tier1", "tier2", "tier3"))),
            tasks=tuple(exp.get("tasks", ("binary", "multi"))),
            seeds=tuple(exp.get("seeds", (0, 1, 2, 3, 4))),
            calibration_policy=exp.get("calibration_policy", "fixed_tier1"),
            abstain_margin=float(exp.get("abstain_margin", 0.0)),
            include_probe=bool(exp.get("include_probe", True)),
            evaluate_on=exp.get("evaluate_on", "test"),
            probe=probe_cfg,
            backend_options=backend_tbl,
        )


@dataclass(frozen=True)
class SweepCell:
    kind: str  # "zeroshot" or "probe"
    backend: str
    prompt_set: str | None
    task: str
    seed: int
    temperature: float | None = None
    metrics: MetricsReport | None = None
    error: str | None = None

    def key(self) -> tuple:
        return (self.kind, self.backend, self.prompt_set or "", self.task)

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "backend": self.backend,
            "prompt_set": self.prompt_set,
            "task": self.task,
            "seed": self.seed,
            "temperature": self.temperature,
            "metrics": self.metrics.to_json_obj() if self.metrics else None,
            "error": self.error,
        }


@dataclass
class SweepReport:
    config: ExperimentConfig
    cells: list[SweepCell]
    calibrations: dict[str, dict]
    score_files: dict[str, ClassifyResult] = field(default_factory=dict)

    @property
    def failed_cells(self) -> list[SweepCell]:
        return [c for c in self.cells if c.error is not None]

    def aggregates(self) -> list[dict]:
        """Per-cell-group mean and sd of accuracy and macro F1 over seeds."""
        groups: dict[tuple, list[SweepCell]] = {}
        for cell in self.cells:
            if cell.metrics is not None:
                groups.setdefault(cell.key(), []).append(cell)
        out = []
        for key in sorted(groups):
            cells = groups[key]
            accs = [c.metrics.accuracy for c in cells]
            f1s = [c.metrics.macro_f1 for c in cells]
            precs = [c.metrics.macro_precision for c in cells]
            recs = [c.metrics.macro_recall for c in cells]
            out.append(
                {
                    "kind": key[0],
                    "backend": key[1],
                    "prompt_set": key[2] or None,
                    "task": key[3],
                    "n_seeds": len(cells),
                    "mean_accuracy": statistics.fmean(accs),
                    "sd_accuracy": statistics.pstdev(accs) if len(accs) > 1 else 0.0,
                    "mean_macro_f1": statistics.fmean(f1s),
                    "sd_macro_f1": statistics.pstdev(f1s) if len(f1s) > 1 else 0.0,
                    "mean_macro_precision": statistics.fmean(precs),
                    "mean_macro_recall": statistics.fmean(recs),
                }
            )
        return out

    def to_json_obj(self) -> dict:
        return {
            "config": {
                "backends": list(self.config.backends),
                "prompt_sets": list(self.config.prompt_sets),
                "tasks": list(self.config.tasks),
                "seeds": list(self.config.seeds),
                "calibration_policy": self.config.calibration_policy,
                "abstain_margin": self.config.abstain_margin,
                "include_probe": self.config.include_probe,
                "evaluate_on": self.config.evaluate_on,
            },
            "cells": [c.to_json_obj() for c in self.cells],
            "aggregates": self.aggregates(),
            "calibrations": self.calibrations,
            "n_failed": len(self.failed_cells),
        }


def _eval_records(manifest: Manifest, config: ExperimentConfig) -> Manifest:
    if config.evaluate_on == "test":
        sub = manifest.by_split("test")
        if len(sub) == 0:
            raise InputError("manifest has no test split; run `posepilot split` first")
        return sub
    return manifest


def _filter_to_classes(manifest: Manifest, classes: Sequence[ClassLabel]) -> Manifest:
    keep = set(classes)
    return Manifest(
        tuple(r for r in manifest.records if r.label in keep), manifest.resize_target
    )


def run_sweep(
    config: ExperimentConfig,
    manifest: Manifest,
    prompt_resolver: Callable[[str], PromptSet] | None = None,
    cache_dir: str | Path | None = None,
) -> SweepReport:
    """Evaluate every (backend, prompt set, task, seed) grid cell."""
    resolver = prompt_resolver or _builtin_resolver
    cells: list[SweepCell] = []
    calibrations: dict[str, dict] = {}
    score_files: dict[str, ClassifyResult] = {}

    for backend_name in config.backends:
        try:
            backend = create_backend(
                backend_name, **config.backend_options.get(backend_name, {})
            )
        except PosepilotError as exc:
            for ps_id in config.prompt_sets:
                for task in config.tasks:
                    for seed in config.seeds:
                        cells.append(
                            SweepCell(
                                "zeroshot", backend_name, ps_id, task, seed, error=str(exc)
                            )
                        )
            continue
        cache = EmbeddingCache(backend, cache_dir)
        try:
            temps = _calibrate(
                backend_name, cache, manifest, config, resolver, calibrations
            )
            eval_manifest = _eval_records(manifest, config)
        except PosepilotError as exc:
            for ps_id in config.prompt_sets:
                for task in config.tasks:
                    for seed in config.seeds:
                        cells.append(
                            SweepCell(
                                "zeroshot", backend_name, ps_id, task, seed, error=str(exc)
                            )
                        )
            if config.include_probe:
                cells.extend(_probe_cells(backend, cache, manifest, config))
            continue

        for ps_id in config.prompt_sets:
            prompt_set = resolver(ps_id)
            tau = temps.get(ps_id, 1.0)
            for task in config.tasks:
                active = task_labels(task)
                try:
                    result = classify_manifest(
                        _filter_to_classes(eval_manifest, active),
                        backend,
                        prompt_set,
                        temperature=tau,
                        abstain_margin=config.abstain_margin,
                        active_classes=active,
                        cache=cache,
                    )
                    if result.failures:
                        raise InputError(
                            f"{len(result.failures)} unreadable images "
                            f"(first: {result.failures[0].image_id})"
                        )
                    pairs = [
                        (s.true_label, s.predicted, s.abstained) for s in result.scores
                    ]
                    report = compute_metrics(pairs, labels=active)
                    score_files[f"{backend_name}__{ps_id}__{task}"] = result
                    for seed in config.seeds:
                        cells.append(
                            SweepCell(
                                "zeroshot",
                                backend_name,
                                ps_id,
                                task,
                                seed,
                                temperature=tau,
                                metrics=report,
                            )
                        )
                except PosepilotError as exc:
                    for seed in config.seeds:
                        cells.append(
                            SweepCell(
                                "zeroshot", backend_name, ps_id, task, seed, error=str(exc)
                            )
                        )

        if config.include_probe:
            cells.extend(_probe_cells(backend, cache, manifest, config))

    return SweepReport(config, cells, calibrations, score_files)


def _builtin_resolver(ps_id: str) -> PromptSet:
    builtin = builtin_by_id()
    if ps_id not in builtin:
        raise InputError(f"unknown prompt set {ps_id!r}")
    return builtin[ps_id]


def _calibrate(
    backend_name: str,
    cache: EmbeddingCache,
    manifest: Manifest,
    config: ExperimentConfig,
    resolver: Callable[[str], PromptSet],
    calibrations: dict[str, dict],
) -> dict[str, float]:
    """Temperatures per prompt set under the configured policy."""
    if config.calibration_policy == "none":
        return {ps_id: 1.0 for ps_id in config.prompt_sets}
    val = manifest.by_split("val")
    if len(val) == 0:
        raise InputError("calibration needs a val split; run `posepilot split` first")

    def fit_for(ps_id: str) -> CalibrationResult:
        result = classify_manifest(
            val, cache.backend, resolver(ps_id), temperature=1.0, cache=cache
        )
        samples = [
            (
                [s.similarities[lab] for lab in sorted(s.similarities, key=int)],
                s.true_label,
            )
            for s in result.scores
        ]
        return fit_temperature(samples)

    temps: dict[str, float] = {}
    if config.calibration_policy == "fixed_tier1":
        anchor = config.prompt_sets[0]
        calib = fit_for(anchor)
        calibrations[backend_name] = {anchor: calib.to_json_obj()}
        temps = {ps_id: calib.temperature for ps_id in config.prompt_sets}
    else:  # per_tier
        calibrations[backend_name] = {}
        for ps_id in config.prompt_sets:
            calib = fit_for(ps_id)
            calibrations[backend_name][ps_id] = calib.to_json_obj()
            temps[ps_id] = calib.temperature
    return temps


def _probe_cells(
    backend, cache: EmbeddingCache, manifest: Manifest, config: ExperimentConfig
) -> list[SweepCell]:
    from .zeroshot import _default_loader

    cells: list[SweepCell] = []
    size = backend.descriptor.native_input_size

    def embed_split(split: str):
        records = manifest.by_split(split).records
        return [
            (
                cache.embed_image(r.image_id, lambda: _default_loader(r.file_path, size)),
                r.label,
            )
            for r in records
        ]

    try:
        all_train = embed_split("train")
        all_val = embed_split("val")
        all_test = embed_split("test")
    except PosepilotError as exc:
        return [
            SweepCell("probe", backend.name, None, task, seed, error=str(exc))
            for task in config.tasks
            for seed in config.seeds
        ]

    for task in config.tasks:
        active = set(task_labels(task))
        train = [(e, lab) for e, lab in all_train if lab in active]
        val = [(e, lab) for e, lab in all_val if lab in active]
        test = [(e, lab) for e, lab in all_test if lab in active]
        for seed in config.seeds:
            try:
                model = train_linear_probe(train, val, config.probe, seed=seed)
                preds = model.predict_embeddings([e for e, _ in test])
                pairs = [
                    (lab, pred, False) for (_, lab), pred in zip(test, preds)
                ]
                report = compute_metrics(pairs, labels=task_labels(task))
                cells.append(
                    SweepCell("probe", backend.name, None, task, seed, metrics=report)
                )
            except PosepilotError as exc:
                cells.append(
                    SweepCell("probe", backend.name, None, task, seed, error=str(exc))
                )
    return cells


# ---------------------------------------------------------------------------
# rendering and persistence
# ---------------------------------------------------------------------------

def render_tables(report: SweepReport) -> str:
    """Plain-text per-model and per-tier tables, two-decimal rendering."""
    agg = report.aggregates()
    lines: list[str] = []

    probe_rows = {a["backend"]: {} for a in agg if a["kind"] == "probe"}
    for a in agg:
        if a["kind"] == "probe":
            probe_rows[a["backend"]][a["task"]] = a
    if probe_rows:
        lines.append("Per-model probe performance")
        header = (
            f"{'Model':<20} {'B. Acc.':>8} {'M. Acc.':>8} "
            f"{'Prec.':>6} {'Rec.':>6} {'F1':>6}"
        )
        lines += [header, "-" * len(header)]
        for backend in sorted(probe_rows):
            row = probe_rows[backend]
            b_acc = row.get("binary", {}).get("mean_accuracy")
            m = row.get("multi", {})
            lines.append(
                f"{backend:<20} "
                f"{format_value(b_acc) if b_acc is not None else '---':>8} "
                f"{format_value(m.get('mean_accuracy')) if m else '---':>8} "
                f"{format_value(m.get('mean_macro_precision')) if m else '---':>6} "
                f"{format_value(m.get('mean_macro_recall')) if m else '---':>6} "
                f"{format_value(m.get('mean_macro_f1')) if m else '---':>6}"
            )
        lines.append("")

    zs = [a for a in agg if a["kind"] == "zeroshot"]
    if zs:
        backends = list(dict.fromkeys(a["backend"] for a in zs))
        lines.append("Zero-shot performance by prompt tier")
        header = f"{'Task':<12} {'Tier':<8}" + "".join(
            f" {b + ' Acc':>16} {b + ' F1':>16}" for b in backends
        )
        lines += [header, "-" * len(header)]
        by_key = {(a["backend"], a["prompt_set"], a["task"]): a for a in zs}
        for task in report.config.tasks:
            for ps_id in report.config.prompt_sets:
                cols = []
                for b in backends:
                    a = by_key.get((b, ps_id, task))
                    cols.append(
                        f" {format_value(a['mean_accuracy']) if a else '---':>16}"
                        f" {format_value(a['mean_macro_f1']) if a else '---':>16}"
                    )
                lines.append(f"{task:<12} {ps_id:<8}" + "".join(cols))
        lines.append("")

    if report.failed_cells:
        lines.append(f"FAILED CELLS: {len(report.failed_cells)}")
        for cell in report.failed_cells:
            lines.append(
                f"  {cell.kind} {cell.backend}/{cell.prompt_set}/{cell.task}"
                f"/seed={cell.seed}: {cell.error}"
            )
    return "\n".join(lines) + "\n"


def save_sweep(report: SweepReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.json").open("w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    (out / "tables.txt").write_text(render_tables(report), encoding="utf-8")
    scores_dir = out / "scores"
    scores_dir.mkdir(exist_ok=True)
    for name, result in report.score_files.items():
        save_scores(result, scores_dir / f"{name}.jsonl")
