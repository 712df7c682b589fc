"""HTTP facade for the prompt-engineering workbench.

Read-only over the manifest; prompt sets live in an optimistic-revision
store persisted in the same JSON files the CLI reads. Evaluation is
synchronous and capped, serving the interactive loop; batch work stays
on the CLI. Errors all carry {code, message, detail}.
"""

from __future__ import annotations

import json
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .backends.base import Backend
from .backends.cache import EmbeddingCache
from .backends.registry import create_backend
from .errors import PosepilotError, ValidationError
from .imageio import load_rgb, resize_rgb
from .labels import ClassLabel, task_labels
from .manifest import Manifest
from .metrics import compute_metrics
from .prompts import PromptSet, builtin_by_id, validate_prompt_set
from .zeroshot import classify_manifest

DEFAULT_WORKING_SET_CAP = 64


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Any = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class RevisionConflict(ApiError):
    def __init__(self, current: int, submitted: int):
        super().__init__(
            409,
            "revision_conflict",
            f"prompt set changed: current revision {current}, submitted {submitted}",
            {"current_revision": current, "submitted_revision": submitted},
        )


class PromptStore:
    """Prompt sets with monotonically increasing revisions.

    Builtins seed the store at revision 0 and may be shadowed by edits.
    When a directory is given, every accepted PUT is persisted atomically
    to `<set_id>.json` in the CLI's on-disk format.
    """

    def __init__(self, directory: str | Path | None = None):
        self._lock = threading.Lock()
        self._sets: dict[str, tuple[PromptSet, int]] = {
            ps_id: (ps, 0) for ps_id, ps in builtin_by_id().items()
        }
        self.dir = Path(directory) if directory else None
        if self.dir is not None and self.dir.is_dir():
            for path in sorted(self.dir.glob("*.json")):
                try:
                    obj = json.loads(path.read_text(encoding="utf-8"))
                    ps = PromptSet.from_json_obj(obj)
                    self._sets[ps.set_id] = (ps, int(obj.get("revision", 1)))
                except (ValueError, PosepilotError):
                    continue

    def list(self) -> list[tuple[PromptSet, int]]:
        with self._lock:
            return [self._sets[k] for k in sorted(self._sets)]

    def get(self, ps_id: str) -> tuple[PromptSet, int]:
        with self._lock:
            try:
                return self._sets[ps_id]
            except KeyError:
                raise ApiError(404, "not_found", f"no prompt set {ps_id!r}") from None

    def put(self, ps: PromptSet, base_revision: int | None) -> int:
        with self._lock:
            current = self._sets.get(ps.set_id, (None, 0))[1] if ps.set_id in self._sets else None
            if current is not None and base_revision is not None and base_revision != current:
                raise RevisionConflict(current, base_revision)
            new_rev = (current or 0) + 1
            self._sets[ps.set_id] = (ps, new_rev)
            if self.dir is not None:
                self.dir.mkdir(parents=True, exist_ok=True)
                payload = ps.to_json_obj()
                payload["revision"] = new_rev
                tmp = self.dir / f".{ps.set_id}.json.tmp"
                tmp.write_text(
                    json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8",
                )
                tmp.replace(self.dir / f"{ps.set_id}.json")
            return new_rev


@dataclass
class WorkingSet:
    ws_id: str
    image_ids: tuple[str, ...]
    backend: str
    task: str
    temperature: float
    abstain_margin: float


class WorkingSetBody(BaseModel):
    image_ids: list[str]
    task: str = "multi"
    temperature: float = Field(default=1.0, gt=0)
    abstain_margin: float = Field(default=0.0, ge=0)


class EvaluateBody(BaseModel):
    ws_id: str
    prompt_set_id: str


class PromptSetBody(BaseModel):
    tier: int = 0
    description: str = ""
    prompts: dict[str, list[str]]
    base_revision: int | None = None


def create_app(
    manifest: Manifest,
    backend_name: str = "mock",
    backend_options: dict | None = None,
    promptset_dir: str | Path | None = None,
    overlay_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
    working_set_cap: int = DEFAULT_WORKING_SET_CAP,
    cache_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="posepilot workbench")
    store = PromptStore(promptset_dir)
    records = {r.image_id: r for r in manifest.records}
    working_sets: dict[str, WorkingSet] = {}
    ws_lock = threading.Lock()
    ws_counter = {"n": 0}
    overlays = Path(overlay_dir) if overlay_dir else Path(tempfile.mkdtemp(prefix="posepilot-overlays-"))
    overlays.mkdir(parents=True, exist_ok=True)

    backend: Backend | None = None
    backend_error: str | None = None
    try:
        backend = create_backend(backend_name, **(backend_options or {}))
    except Exception as exc:  # noqa: BLE001 - keep the app serving, 503 later
        backend_error = str(exc)
    cache = EmbeddingCache(backend, cache_dir) if backend is not None else None
    app.state.backend = backend
    app.state.cache = cache
    app.state.prompt_store = store

    def require_backend() -> Backend:
        if backend is None:
            raise ApiError(503, "backend_unavailable", backend_error or "no backend")
        return backend

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(PosepilotError)
    async def _domain_error(_request: Request, exc: PosepilotError):
        return JSONResponse(
            status_code=422,
            content={"code": "invalid_input", "message": str(exc), "detail": None},
        )

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "backend": backend_name,
            "backend_ready": backend is not None,
            "n_records": len(manifest),
        }

    @app.get("/api/manifest")
    def get_manifest():
        return {
            "resize_target": list(manifest.resize_target),
            "class_counts": {lab.name: n for lab, n in manifest.class_counts.items()},
            "records": [r.to_json_obj() for r in manifest.records],
        }

    @app.get("/api/promptsets")
    def list_promptsets():
        return {
            "promptsets": [
                {**ps.to_json_obj(), "revision": rev} for ps, rev in store.list()
            ]
        }

    @app.get("/api/promptsets/{ps_id}")
    def get_promptset(ps_id: str):
        ps, rev = store.get(ps_id)
        return {**ps.to_json_obj(), "revision": rev}

    @app.put("/api/promptsets/{ps_id}")
    def put_promptset(ps_id: str, body: PromptSetBody):
        try:
            ps = PromptSet.from_json_obj(
                {
                    "set_id": ps_id,
                    "tier": body.tier,
                    "description": body.description,
                    "prompts": body.prompts,
                }
            )
        except ValidationError as exc:
            raise ApiError(422, "invalid_prompt_set", str(exc)) from None
        findings = validate_prompt_set(ps)
        rev = store.put(ps, body.base_revision)
        return {
            **ps.to_json_obj(),
            "revision": rev,
            "lint_findings": [f.to_json_obj() for f in findings],
        }

    @app.post("/api/workingsets", status_code=201)
    def post_workingset(body: WorkingSetBody):
        if not body.image_ids:
            raise ApiError(422, "empty_working_set", "image_ids must be non-empty")
        if len(body.image_ids) > working_set_cap:
            raise ApiError(
                422,
                "working_set_too_large",
                f"cap is {working_set_cap} images, got {len(body.image_ids)}",
            )
        unknown = [i for i in body.image_ids if i not in records]
        if unknown:
            raise ApiError(404, "unknown_images", f"not in manifest: {unknown[:5]}")
        try:
            task_labels(body.task)
        except PosepilotError as exc:
            raise ApiError(422, "invalid_task", str(exc)) from None
        with ws_lock:
            ws_counter["n"] += 1
            ws_id = f"ws-{ws_counter['n']}"
            working_sets[ws_id] = WorkingSet(
                ws_id=ws_id,
                image_ids=tuple(body.image_ids),
                backend=backend_name,
                task=body.task,
                temperature=body.temperature,
                abstain_margin=body.abstain_margin,
            )
        return {"ws_id": ws_id, "n_images": len(body.image_ids)}

    @app.post("/api/evaluate")
    def evaluate(body: EvaluateBody):
        with ws_lock:
            ws = working_sets.get(body.ws_id)
        if ws is None:
            raise ApiError(404, "not_found", f"no working set {body.ws_id!r}")
        ps, rev = store.get(body.prompt_set_id)
        be = require_backend()
        active = task_labels(ws.task)
        keep = set(active)
        subset = Manifest(
            tuple(records[i] for i in ws.image_ids if records[i].label in keep),
            manifest.resize_target,
        )
        if len(subset) == 0:
            raise ApiError(
                422,
                "empty_after_task_filter",
                f"no working-set image has a {ws.task}-task label",
            )
        result = classify_manifest(
            subset,
            be,
            ps,
            temperature=ws.temperature,
            abstain_margin=ws.abstain_margin,
            active_classes=active,
            cache=cache,
        )
        pairs = [(s.true_label, s.predicted, s.abstained) for s in result.scores]
        report = compute_metrics(pairs, labels=active)
        return {
            "ws_id": ws.ws_id,
            "prompt_set_id": body.prompt_set_id,
            "prompt_set_revision": rev,
            "scores": [s.to_json_obj() for s in result.scores],
            "failures": [
                {"image_id": f.image_id, "error": f.error} for f in result.failures
            ],
            "metrics": report.to_json_obj(),
        }

    @app.get("/api/saliency")
    def saliency_endpoint(
        image_id: str,
        promptset: str,
        class_name: str | None = Query(None, alias="class"),
    ):
        return _saliency_impl(image_id, promptset, class_name)

    def _saliency_impl(image_id: str, promptset: str, class_name: str | None):
        from .saliency import save_overlay, stats

        rec = records.get(image_id)
        if rec is None:
            raise ApiError(404, "not_found", f"no image {image_id!r}")
        ps, rev = store.get(promptset)
        be = require_backend()
        if class_name is not None:
            try:
                class_labels = [ClassLabel.from_name(class_name)]
            except ValueError as exc:
                raise ApiError(422, "invalid_class", str(exc)) from None
        else:
            class_labels = list(ps.prompts)
        image = resize_rgb(load_rgb(rec.file_path), be.descriptor.native_input_size)
        sw = be.descriptor.native_input_size[0] / rec.width_px
        sh = be.descriptor.native_input_size[1] / rec.height_px
        if rec.person_box is not None:
            x, y, w, h = rec.person_box
            box = (x * sw, y * sh, w * sw, h * sh)
            full_image_box = False
        else:
            box = (
                0.0,
                0.0,
                float(be.descriptor.native_input_size[0]),
                float(be.descriptor.native_input_size[1]),
            )
            full_image_box = True
        entries = []
        for lab in class_labels:
            for k, prompt in enumerate(ps.prompts[lab]):
                heat = be.attribute(image, prompt)
                st = stats(heat, box)
                name = f"{image_id}__{promptset}-r{rev}__{lab.name}__{k}.png"
                save_overlay(image, heat, overlays / name)
                entries.append(
                    {
                        "class": lab.name,
                        "prompt": prompt,
                        "overlay": f"/overlays/{name}",
                        **st.to_json_obj(),
                    }
                )
        return {
            "image_id": image_id,
            "prompt_set_id": promptset,
            "prompt_set_revision": rev,
            "full_image_box": full_image_box,
            "stats": entries,
        }

    from fastapi.staticfiles import StaticFiles

    app.mount("/overlays", StaticFiles(directory=str(overlays)), name="overlays")
    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
