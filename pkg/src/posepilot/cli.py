"""posepilot command line: ingest, split, classify, calibrate, evaluate,
pose-eval, pose-ingest, prompts, saliency, sweep, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends.cache import EmbeddingCache
from .backends.registry import available_backends, create_backend
from .calibration import fit_temperature
from .errors import PosepilotError
from .labels import task_labels
from .manifest import eda_stats, load_manifest, save_manifest, stratified_split
from .metrics import compute_metrics, render_report_table, report_json, save_report
from .prompts import (
    PromptSet,
    StopList,
    builtin_by_id,
    builtin_tiers,
    load_prompt_set,
    save_prompt_set,
    validate_prompt_set,
)
from .zeroshot import classify_manifest, load_scores, save_scores


def _fail(message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(1)


def resolve_prompt_set(ps_id: str, store_dir: Path | None) -> PromptSet:
    """Builtin tier id, a stored set id, or a direct file path."""
    path = Path(ps_id)
    if path.suffix == ".json" and path.exists():
        return load_prompt_set(path)
    if store_dir is not None:
        stored = store_dir / f"{ps_id}.json"
        if stored.exists():
            return load_prompt_set(stored)
    builtin = builtin_by_id()
    if ps_id in builtin:
        return builtin[ps_id]
    raise PosepilotError(f"unknown prompt set {ps_id!r}")


@click.group()
def main():
    """Zero-shot posture classification toolkit."""


@main.command()
@click.option("--coco-annotations", required=True, type=click.Path(exists=True))
@click.option("--images-dir", required=True, type=click.Path())
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True),
              help="JSON mapping of image id or file name to class label.")
@click.option("--out", required=True, type=click.Path())
def ingest(coco_annotations, images_dir, labels_path, out):
    """Build a manifest from COCO annotations plus a curation label map."""
    from .coco import ingest_coco, load_labels_file

    try:
        labels = load_labels_file(labels_path)
        manifest = ingest_coco(coco_annotations, images_dir, labels)
    except PosepilotError as exc:
        raise _fail(str(exc))
    save_manifest(manifest, out)
    counts = {lab.name: n for lab, n in manifest.class_counts.items()}
    click.echo(f"wrote {len(manifest)} records to {out} ({counts})")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--fractions", default="0.8,0.1,0.1", show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Output path; defaults to rewriting the manifest in place.")
def split(manifest_path, seed, fractions, out):
    """Assign stratified train/val/test splits."""
    try:
        fracs = tuple(float(f) for f in fractions.split(","))
        manifest = load_manifest(manifest_path)
        manifest = stratified_split(manifest, fracs, seed)
    except (PosepilotError, ValueError) as exc:
        raise _fail(str(exc))
    save_manifest(manifest, out or manifest_path)
    sizes = {s: len(manifest.by_split(s)) for s in ("train", "val", "test")}
    click.echo(f"split sizes: {sizes}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def eda(manifest_path, out):
    """Size histogram and per-class aspect-ratio quartiles."""
    try:
        summary = eda_stats(load_manifest(manifest_path))
    except PosepilotError as exc:
        raise _fail(str(exc))
    text = json.dumps(summary.to_json_obj(), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default="mock", show_default=True)
@click.option("--promptset", default="tier1", show_default=True)
@click.option("--task", default="multi", type=click.Choice(["multi", "binary"]),
              show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--abstain-margin", default=0.0, show_default=True)
@click.option("--split", "only_split", default=None,
              help="Restrict to one split (train/val/test).")
@click.option("--promptset-dir", type=click.Path(), default=None)
@click.option("--weights-path", default=None)
@click.option("--out", required=True, type=click.Path())
def classify(manifest_path, backend, promptset, task, temperature, abstain_margin,
             only_split, promptset_dir, weights_path, out):
    """Score manifest images against a prompt set."""
    try:
        manifest = load_manifest(manifest_path)
        if only_split:
            manifest = manifest.by_split(only_split)
        ps = resolve_prompt_set(promptset, Path(promptset_dir) if promptset_dir else None)
        opts = {"weights_path": weights_path} if weights_path else {}
        be = create_backend(backend, **opts)
        active = task_labels(task)
        keep = set(active)
        from .manifest import Manifest

        manifest = Manifest(
            tuple(r for r in manifest.records if r.label in keep),
            manifest.resize_target,
        )
        result = classify_manifest(
            manifest,
            be,
            ps,
            temperature=temperature,
            abstain_margin=abstain_margin,
            active_classes=active,
            cache=EmbeddingCache(be),
        )
    except PosepilotError as exc:
        raise _fail(str(exc))
    save_scores(result, out)
    click.echo(f"scored {len(result.scores)} images -> {out}")
    if result.failures:
        click.echo(f"failures: {len(result.failures)}", err=True)
        for f in result.failures:
            click.echo(f"  {f.image_id}: {f.error}", err=True)


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--bins", default=10, show_default=True)
@click.option("--out", required=True, type=click.Path())
def calibrate(scores_path, bins, out):
    """Fit a temperature on validation scores (needs true_label fields)."""
    try:
        scores, _ = load_scores(scores_path)
        samples = []
        for s in scores:
            if s.true_label is None:
                raise PosepilotError(
                    f"score for {s.image_id} lacks true_label; classify a "
                    "labeled manifest to calibrate"
                )
            active = sorted(s.similarities, key=int)
            vec = [s.similarities[lab] for lab in active]
            samples.append((vec, active.index(s.true_label)))
        result = fit_temperature(samples, n_bins=bins)
    except PosepilotError as exc:
        raise _fail(str(exc))
    with Path(out).open("w", encoding="utf-8") as fh:
        json.dump(result.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(
        f"temperature={result.temperature:.6g} "
        f"ece_before={result.ece_before:.4f} ece_after={result.ece_after:.4f}"
    )


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None,
              help="Source of truth labels when score lines lack true_label.")
@click.option("--task", default="multi", type=click.Choice(["multi", "binary"]),
              show_default=True)
@click.option("--include-abstained", is_flag=True,
              help="Count abstained records as errors instead of dropping them.")
@click.option("--table", "as_table", is_flag=True)
@click.option("--out", type=click.Path(), default=None)
def evaluate(scores_path, manifest_path, task, include_abstained, as_table, out):
    """Metrics report from a scores file."""
    try:
        scores, failures = load_scores(scores_path)
        truth = {}
        if manifest_path:
            manifest = load_manifest(manifest_path)
            truth = {r.image_id: r.label for r in manifest.records}
        labels = task_labels(task)
        keep = set(labels)
        pairs = []
        for s in scores:
            true = s.true_label if s.true_label is not None else truth.get(s.image_id)
            if true is None:
                raise PosepilotError(
                    f"no truth label for {s.image_id}; pass --manifest"
                )
            if true not in keep:
                continue
            pairs.append((true, s.predicted, s.abstained))
        report = compute_metrics(pairs, labels=labels, include_abstained=include_abstained)
    except PosepilotError as exc:
        raise _fail(str(exc))
    if out:
        save_report(report, out)
    if as_table:
        click.echo(render_report_table([(scores[0].prompt_set_id if scores else "-", report)]))
    else:
        click.echo(report_json(report))
    if failures:
        click.echo(f"note: scores file lists {len(failures)} failed images", err=True)


@main.group()
def prompts():
    """List, show, lint, or add prompt sets."""


@prompts.command("list")
@click.option("--promptset-dir", type=click.Path(), default=None)
def prompts_list(promptset_dir):
    for ps in builtin_tiers():
        click.echo(f"{ps.set_id}\ttier={ps.tier}\t{ps.description} [builtin]")
    if promptset_dir and Path(promptset_dir).is_dir():
        for path in sorted(Path(promptset_dir).glob("*.json")):
            try:
                ps = load_prompt_set(path)
            except PosepilotError:
                continue
            click.echo(f"{ps.set_id}\ttier={ps.tier}\t{ps.description}")


@prompts.command("show")
@click.argument("set_id")
@click.option("--promptset-dir", type=click.Path(), default=None)
def prompts_show(set_id, promptset_dir):
    try:
        ps = resolve_prompt_set(set_id, Path(promptset_dir) if promptset_dir else None)
    except PosepilotError as exc:
        raise _fail(str(exc))
    click.echo(json.dumps(ps.to_json_obj(), indent=2, sort_keys=True))


@prompts.command("lint")
@click.argument("set_id")
@click.option("--promptset-dir", type=click.Path(), default=None)
@click.option("--stoplist", "stoplist_path", type=click.Path(exists=True), default=None)
def prompts_lint(set_id, promptset_dir, stoplist_path):
    try:
        ps = resolve_prompt_set(set_id, Path(promptset_dir) if promptset_dir else None)
        stoplist = StopList.load(stoplist_path) if stoplist_path else None
        findings = validate_prompt_set(ps, stoplist)
    except PosepilotError as exc:
        raise _fail(str(exc))
    if not findings:
        click.echo("clean: no findings")
        return
    for f in findings:
        click.echo(
            f"{f.severity}: {f.class_label.name}: {f.term!r} ({f.category}) "
            f"in \"{f.prompt}\""
        )


@prompts.command("add")
@click.argument("file", type=click.Path(exists=True))
@click.option("--promptset-dir", required=True, type=click.Path())
def prompts_add(file, promptset_dir):
    try:
        ps = load_prompt_set(file)
    except PosepilotError as exc:
        raise _fail(str(exc))
    store = Path(promptset_dir)
    store.mkdir(parents=True, exist_ok=True)
    save_prompt_set(ps, store / f"{ps.set_id}.json")
    findings = validate_prompt_set(ps)
    click.echo(f"stored {ps.set_id} ({len(findings)} lint findings)")


@main.command("pose-eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--thresholds", default="default", show_default=True,
              help="'fit', 'default', or a JSON threshold file.")
@click.option("--conf-threshold", default=0.5, show_default=True)
@click.option("--split", "eval_split", default="test", show_default=True)
@click.option("--out", required=True, type=click.Path())
def pose_eval(manifest_path, thresholds, conf_threshold, eval_split, out):
    """Evaluate the keypoint-geometry rule baseline."""
    from .posebaseline import RuleThresholds, evaluate_pose_rule

    try:
        manifest = load_manifest(manifest_path)
        thr = thresholds
        if thresholds not in ("fit", "default"):
            thr = RuleThresholds.from_file(thresholds)
        report = evaluate_pose_rule(
            manifest, thr, conf_threshold, eval_split=eval_split or None
        )
    except PosepilotError as exc:
        raise _fail(str(exc))
    with Path(out).open("w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    acc = report["accuracy_on_covered"]
    click.echo(
        f"coverage={report['coverage']:.3f} "
        f"accuracy_on_covered={acc if acc is None else format(acc, '.3f')}"
    )


@main.command("pose-ingest")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--detector-cmd", required=True,
              help="Command printing JSON keypoints for an image path.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
def pose_ingest_cmd(manifest_path, detector_cmd, out, report_path):
    """Run an external pose detector and store keypoints in the manifest."""
    from .posebaseline import pose_ingest

    try:
        manifest = load_manifest(manifest_path)
        manifest, audit = pose_ingest(manifest, detector_cmd)
    except PosepilotError as exc:
        raise _fail(str(exc))
    save_manifest(manifest, out or manifest_path)
    if report_path:
        with Path(report_path).open("w", encoding="utf-8") as fh:
            json.dump(audit, fh, indent=2, sort_keys=True)
            fh.write("\n")
    ok = sum(1 for v in audit.values() if v.get("status") == "ok")
    click.echo(f"keypoints written for {ok}/{len(audit)} records")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default="mock", show_default=True)
@click.option("--promptset", default="tier3", show_default=True)
@click.option("--promptset-dir", type=click.Path(), default=None)
@click.option("--weights-path", default=None)
@click.option("--overlay-dir", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
def saliency(manifest_path, backend, promptset, promptset_dir, weights_path,
             overlay_dir, out):
    """Attribution statistics per image and prompt."""
    from .imageio import load_rgb, resize_rgb
    from .saliency import compare_across_prompts, save_overlay

    try:
        manifest = load_manifest(manifest_path)
        ps = resolve_prompt_set(promptset, Path(promptset_dir) if promptset_dir else None)
        opts = {"weights_path": weights_path} if weights_path else {}
        be = create_backend(backend, **opts)
    except PosepilotError as exc:
        raise _fail(str(exc))
    if overlay_dir:
        Path(overlay_dir).mkdir(parents=True, exist_ok=True)
    size = be.descriptor.native_input_size
    with Path(out).open("w", encoding="utf-8") as fh:
        for rec in manifest.records:
            try:
                image = resize_rgb(load_rgb(rec.file_path), size)
                sx = size[0] / rec.width_px
                sy = size[1] / rec.height_px
                if rec.person_box is not None:
                    x, y, w, h = rec.person_box
                    box = (x * sx, y * sy, w * sx, h * sy)
                    degenerate_box = False
                else:
                    box = (0.0, 0.0, float(size[0]), float(size[1]))
                    degenerate_box = True
                for lab, plist in ps.prompts.items():
                    for k, prompt in enumerate(plist):
                        stats_list = compare_across_prompts(image, be, [prompt], box)
                        st = stats_list[0]
                        entry = {
                            "image_id": rec.image_id,
                            "class": lab.name,
                            "prompt": prompt,
                            "full_image_box": degenerate_box,
                            **st.to_json_obj(),
                        }
                        if overlay_dir:
                            heat = be.attribute(image, prompt)
                            name = f"{rec.image_id}__{lab.name}__{k}.png"
                            save_overlay(image, heat, Path(overlay_dir) / name)
                            entry["overlay"] = name
                        fh.write(json.dumps(entry, sort_keys=True) + "\n")
            except PosepilotError as exc:
                fh.write(
                    json.dumps({"image_id": rec.image_id, "error": str(exc)}) + "\n"
                )
    click.echo(f"saliency stats -> {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--promptset-dir", type=click.Path(), default=None)
@click.option("--cache-dir", type=click.Path(), default=None)
def sweep(config_path, manifest_path, out_dir, promptset_dir, cache_dir):
    """Run the full backend x tier x task x seed grid."""
    from .harness import ExperimentConfig, run_sweep, save_sweep

    try:
        config = ExperimentConfig.from_toml(config_path)
        manifest = load_manifest(manifest_path)
        store = Path(promptset_dir) if promptset_dir else None
        report = run_sweep(
            config,
            manifest,
            prompt_resolver=lambda ps_id: resolve_prompt_set(ps_id, store),
            cache_dir=cache_dir,
        )
    except PosepilotError as exc:
        raise _fail(str(exc))
    save_sweep(report, out_dir)
    click.echo(f"sweep written to {out_dir} ({len(report.cells)} cells)")
    if report.failed_cells:
        click.echo(f"{len(report.failed_cells)} cells failed", err=True)
        raise click.exceptions.Exit(2)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default="mock", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--promptset-dir", type=click.Path(), default=None)
@click.option("--overlay-dir", type=click.Path(), default=None)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Static directory with the workbench UI build.")
@click.option("--weights-path", default=None)
def serve(manifest_path, backend, port, host, promptset_dir, overlay_dir, ui_dir,
          weights_path):
    """Serve the workbench HTTP API."""
    try:
        import uvicorn

        from .service import create_app
    except ImportError as exc:
        raise _fail(f"service extra not installed: {exc}")
    try:
        manifest = load_manifest(manifest_path)
        opts = {"weights_path": weights_path} if weights_path else {}
        app = create_app(
            manifest,
            backend_name=backend,
            backend_options=opts,
            promptset_dir=promptset_dir,
            overlay_dir=overlay_dir,
            ui_dir=ui_dir,
        )
    except PosepilotError as exc:
        raise _fail(str(exc))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main(sys.argv[1:])
