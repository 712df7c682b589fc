/** Workbench wiring: manifest browser, draft editor, coalesced evaluate
 * loop, before/after dashboards, abstention slider, saliency panel. */

import { ApiClient, BackendUnavailableError, RevisionConflictError } from "./api.js";
import type { EvaluateResult } from "./api.js";
import { EvaluationQueue } from "./coalescer.js";
import {
	chipStates,
	coveragePreview,
	displayedAccuracy,
	displayedMargins,
	marginHistogram,
} from "./derive.js";
import {
	DraftStore,
	draftFromPromptSet,
	isDirty,
	validateDraft,
	withEdit,
	withRemoved,
} from "./draft.js";
import type { PromptDraft } from "./draft.js";
import { CLASS_ORDER } from "./types.js";
import type { ClassName, ManifestRecord, TaskName } from "./types.js";

const api = new ApiClient("");
const drafts = new DraftStore();

function $(id: string): HTMLElement {
	const el = document.getElementById(id);
	if (!el) throw new Error(`missing element #${id}`);
	return el;
}

interface AppState {
	records: ManifestRecord[];
	picked: Set<string>;
	wsId: string | null;
	wsTask: TaskName;
	draft: PromptDraft | null;
	current: EvaluateResult | null;
	previous: EvaluateResult | null;
	abstainThreshold: number;
}

const state: AppState = {
	records: [],
	picked: new Set(),
	wsId: null,
	wsTask: "multi",
	draft: null,
	current: null,
	previous: null,
	abstainThreshold: 0,
};

// ---------------------------------------------------------------------------
// evaluation queue: PUT the draft, evaluate, swap dashboards
// ---------------------------------------------------------------------------

const queue = new EvaluationQueue<PromptDraft>(async (draft) => {
	setQueueState("evaluating…");
	try {
		const saved = await api.putPromptSet(draft.setId, {
			tier: draft.tier,
			description: draft.description,
			prompts: draft.prompts,
			base_revision: draft.baseRevision,
		});
		if (state.draft && state.draft.setId === draft.setId) {
			state.draft = {
				...state.draft,
				baseRevision: saved.revision,
				basePrompts: JSON.parse(JSON.stringify(draft.prompts)),
			};
			drafts.save(state.draft);
		}
		renderLint(saved.lint_findings ?? []);
		if (state.wsId === null) {
			setQueueState("saved; pick a working set to evaluate");
			return;
		}
		const result = await api.evaluate(state.wsId, draft.setId);
		state.previous = state.current;
		state.current = result;
		renderResults();
		setQueueState("");
	} catch (err) {
		if (err instanceof RevisionConflictError) {
			showConflictDialog();
		} else if (err instanceof BackendUnavailableError) {
			showBanner(`backend unavailable: ${err.message} — edits are kept; retry when ready`);
		} else {
			showBanner(String(err));
		}
		setQueueState("");
	}
});

function setQueueState(text: string): void {
	$("queue-state").textContent = text;
}

function showBanner(text: string): void {
	const banner = $("banner");
	banner.textContent = text;
	banner.classList.add("show");
	window.setTimeout(() => banner.classList.remove("show"), 6000);
}

function showConflictDialog(): void {
	const box = $("dialog-box");
	box.innerHTML = "";
	const p = document.createElement("p");
	p.textContent =
		"Prompt set changed on the server since this draft started. " +
		"Reload the server version (drops local edits) or overwrite it?";
	const reload = document.createElement("button");
	reload.className = "btn";
	reload.textContent = "Reload server version";
	reload.onclick = async () => {
		hideDialog();
		if (state.draft) {
			drafts.discard(state.draft.setId);
			await selectPromptSet(state.draft.setId);
		}
	};
	const overwrite = document.createElement("button");
	overwrite.className = "btn primary";
	overwrite.textContent = "Overwrite";
	overwrite.onclick = async () => {
		hideDialog();
		if (!state.draft) return;
		const server = await api.getPromptSet(state.draft.setId);
		state.draft = { ...state.draft, baseRevision: server.revision };
		drafts.save(state.draft);
		queue.submit(state.draft);
	};
	const row = document.createElement("div");
	row.className = "wsrow";
	row.append(reload, overwrite);
	box.append(p, row);
	$("dialog").classList.add("show");
}

function hideDialog(): void {
	$("dialog").classList.remove("show");
}

// ---------------------------------------------------------------------------
// manifest browser and working set
// ---------------------------------------------------------------------------

function renderBrowser(): void {
	const browser = $("browser");
	browser.innerHTML = "";
	for (const cls of CLASS_ORDER) {
		const head = document.createElement("div");
		head.className = "dim";
		head.textContent = cls;
		browser.appendChild(head);
		for (const rec of state.records.filter((r) => r.label === cls)) {
			const btn = document.createElement("button");
			btn.textContent = `${rec.image_id} (${rec.split ?? "unassigned"})`;
			btn.classList.toggle("picked", state.picked.has(rec.image_id));
			btn.onclick = () => {
				if (state.picked.has(rec.image_id)) state.picked.delete(rec.image_id);
				else state.picked.add(rec.image_id);
				renderBrowser();
			};
			browser.appendChild(btn);
		}
	}
}

async function applyWorkingSet(): Promise<void> {
	if (state.picked.size === 0) {
		showBanner("pick at least one image for the working set");
		return;
	}
	state.wsTask = ($("task") as HTMLSelectElement).value as TaskName;
	try {
		state.wsId = await api.createWorkingSet([...state.picked], state.wsTask);
		$("ws-info").textContent =
			`${state.wsId}: ${state.picked.size} images, task=${state.wsTask}`;
		if (state.draft) queue.submit(state.draft);
	} catch (err) {
		showBanner(String(err));
	}
}

// ---------------------------------------------------------------------------
// prompt editor
// ---------------------------------------------------------------------------

async function selectPromptSet(setId: string): Promise<void> {
	const stored = drafts.load(setId);
	if (stored) {
		state.draft = stored;
	} else {
		state.draft = draftFromPromptSet(await api.getPromptSet(setId));
		drafts.save(state.draft);
	}
	renderEditor();
}

function renderEditor(): void {
	const editor = $("editor");
	editor.innerHTML = "";
	const draft = state.draft;
	if (!draft) return;
	for (const cls of CLASS_ORDER) {
		const wrap = document.createElement("div");
		wrap.className = "prompt-class";
		const label = document.createElement("label");
		label.textContent = cls + (isDirty(draft) ? " (draft)" : "");
		wrap.appendChild(label);
		draft.prompts[cls].forEach((text, index) => {
			const row = document.createElement("div");
			row.className = "prompt-row";
			const area = document.createElement("textarea");
			area.value = text;
			area.onchange = () => onEdit(cls, index, area.value);
			const remove = document.createElement("button");
			remove.className = "btn";
			remove.textContent = "x";
			remove.title = "remove prompt";
			remove.onclick = () => {
				if (!state.draft) return;
				state.draft = withRemoved(state.draft, cls, index);
				drafts.save(state.draft);
				renderEditor();
			};
			row.append(area, remove);
			wrap.appendChild(row);
		});
		const add = document.createElement("button");
		add.className = "btn";
		add.textContent = "+ prompt";
		add.onclick = () => {
			if (!state.draft) return;
			state.draft = withEdit(state.draft, cls, state.draft.prompts[cls].length, "");
			drafts.save(state.draft);
			renderEditor();
		};
		wrap.appendChild(add);
		editor.appendChild(wrap);
	}
}

function onEdit(cls: ClassName, index: number, text: string): void {
	if (!state.draft) return;
	state.draft = withEdit(state.draft, cls, index, text);
	drafts.save(state.draft);
	submitDraft();
}

function submitDraft(): void {
	if (!state.draft) return;
	const problems = validateDraft(state.draft);
	renderLintText(problems.length ? "cannot submit:\n" + problems.join("\n") : "");
	if (problems.length) return;
	queue.submit(state.draft);
}

function renderLint(findings: { term: string; category: string; class: string }[]): void {
	renderLintText(
		findings.length
			? findings.map((f) => `lint: "${f.term}" (${f.category}) in ${f.class}`).join("\n")
			: "",
	);
}

function renderLintText(text: string): void {
	$("lint").textContent = text;
}

// ---------------------------------------------------------------------------
// results dashboards
// ---------------------------------------------------------------------------

function renderResults(): void {
	renderResultPanel($("result-current"), "current", state.current);
	renderResultPanel($("result-previous"), "previous", state.previous);
}

function renderResultPanel(
	panel: HTMLElement,
	title: string,
	result: EvaluateResult | null,
): void {
	panel.innerHTML = "";
	const h3 = document.createElement("h3");
	h3.textContent = title;
	panel.appendChild(h3);
	if (!result) {
		const empty = document.createElement("div");
		empty.className = "dim";
		empty.textContent = "—";
		panel.appendChild(empty);
		return;
	}
	const { parsed, rawText } = result;

	const meta = document.createElement("div");
	meta.className = "dim";
	meta.textContent =
		`${parsed.prompt_set_id} r${parsed.prompt_set_revision} · ` +
		`${parsed.metrics.task} · ${parsed.scores.length} images`;
	panel.appendChild(meta);

	const metrics = document.createElement("div");
	metrics.className = "metrics-row";
	const acc = document.createElement("div");
	acc.innerHTML =
		`<div class="metric-big">${displayedAccuracy(rawText)}</div>` +
		`<div class="metric-label">accuracy (server)</div>`;
	const preview = coveragePreview(parsed.scores, state.abstainThreshold);
	const cov = document.createElement("div");
	cov.innerHTML =
		`<div class="metric-big">${preview.covered}/${preview.total}</div>` +
		`<div class="metric-label">covered at slider threshold</div>`;
	metrics.append(acc, cov);
	panel.appendChild(metrics);

	const histWrap = document.createElement("div");
	histWrap.className = "hist";
	const margins = parsed.scores.map((s) => s.margin);
	const top = Math.max(...margins.map((m) => m), 0) || 1;
	for (const bin of marginHistogram(margins, 12)) {
		const bar = document.createElement("div");
		const tallest = Math.max(...marginHistogram(margins, 12).map((b) => b.count), 1);
		bar.style.height = `${(bin.count / tallest) * 100}%`;
		if (bin.hi <= state.abstainThreshold) bar.classList.add("below");
		bar.title = `[${bin.lo.toFixed(3)}, ${bin.hi.toFixed(3)}): ${bin.count}`;
		histWrap.appendChild(bar);
	}
	void top;
	panel.appendChild(histWrap);

	const table = document.createElement("table");
	table.className = "confusion";
	const labels = parsed.metrics.confusion.labels;
	const headRow = document.createElement("tr");
	headRow.innerHTML =
		"<th>true \\ pred</th>" + labels.map((l) => `<th>${l}</th>`).join("");
	table.appendChild(headRow);
	parsed.metrics.confusion.counts.forEach((row, i) => {
		const tr = document.createElement("tr");
		tr.innerHTML =
			`<th>${labels[i]}</th>` + row.map((v) => `<td>${v}</td>`).join("");
		table.appendChild(tr);
	});
	panel.appendChild(table);

	const chips = document.createElement("div");
	chips.className = "chips";
	const states = chipStates(parsed.scores, state.abstainThreshold);
	const marginTokens = displayedMargins(rawText);
	parsed.scores.forEach((score, i) => {
		const chip = document.createElement("span");
		chip.className = `chip ${states[i]}`;
		chip.textContent = score.image_id;
		chip.title =
			`pred ${score.predicted} / true ${score.true_label ?? "?"} · ` +
			`margin ${marginTokens[i] ?? String(score.margin)}`;
		chips.appendChild(chip);
	});
	panel.appendChild(chips);
}

// ---------------------------------------------------------------------------
// saliency panel
// ---------------------------------------------------------------------------

async function runSaliency(): Promise<void> {
	const imageId = ($("sal-image") as HTMLSelectElement).value;
	const cls = ($("sal-class") as HTMLSelectElement).value as ClassName | "";
	if (!imageId || !state.draft) return;
	const target = $("saliency");
	target.textContent = "computing…";
	try {
		const resp = await api.saliency(imageId, state.draft.setId, cls || undefined);
		const table = document.createElement("table");
		table.className = "sal-table";
		table.innerHTML =
			"<tr><th>prompt</th><th>in-person</th><th>entropy</th><th>overlay</th></tr>";
		for (const entry of resp.stats) {
			const tr = document.createElement("tr");
			const overlay = document.createElement("img");
			overlay.src = entry.overlay;
			overlay.alt = entry.prompt;
			tr.innerHTML =
				`<td>${entry.prompt}</td>` +
				`<td>${entry.in_person_proportion.toFixed(3)}</td>` +
				`<td>${entry.normalized_entropy.toFixed(3)}</td>`;
			const td = document.createElement("td");
			td.appendChild(overlay);
			tr.appendChild(td);
			table.appendChild(tr);
		}
		target.innerHTML = "";
		if (resp.full_image_box) {
			const note = document.createElement("div");
			note.className = "dim";
			note.textContent = "no person box in manifest; using full image";
			target.appendChild(note);
		}
		target.appendChild(table);
	} catch (err) {
		target.textContent = String(err);
	}
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

async function bootstrap(): Promise<void> {
	try {
		const manifest = await api.getManifest();
		state.records = manifest.records;
		const counts = CLASS_ORDER
			.map((cls) => `${cls}: ${manifest.class_counts[cls] ?? 0}`)
			.join(" · ");
		$("manifest-summary").textContent = counts;
		renderBrowser();

		const salImage = $("sal-image") as HTMLSelectElement;
		for (const rec of state.records) {
			const opt = document.createElement("option");
			opt.value = rec.image_id;
			opt.textContent = rec.image_id;
			salImage.appendChild(opt);
		}

		const select = $("promptset-select") as HTMLSelectElement;
		for (const ps of await api.listPromptSets()) {
			const opt = document.createElement("option");
			opt.value = ps.set_id;
			opt.textContent = `${ps.set_id} (tier ${ps.tier}, r${ps.revision})`;
			select.appendChild(opt);
		}
		select.onchange = () => void selectPromptSet(select.value);
		if (select.options.length > 0) {
			select.value = (select.options[0] as HTMLOptionElement).value;
			await selectPromptSet(select.value);
		}
		$("status").textContent = `${state.records.length} images loaded`;
	} catch (err) {
		$("status").textContent = "service unreachable";
		showBanner(String(err));
		return;
	}

	$("ws-apply").onclick = () => void applyWorkingSet();
	$("ws-clear").onclick = () => {
		state.picked.clear();
		state.wsId = null;
		$("ws-info").textContent = "no working set";
		renderBrowser();
	};
	$("evaluate-btn").onclick = () => submitDraft();
	$("draft-discard").onclick = () => {
		if (!state.draft) return;
		drafts.discard(state.draft.setId);
		void selectPromptSet(state.draft.setId);
	};
	const slider = $("abstain") as HTMLInputElement;
	slider.oninput = () => {
		// pure client-side recompute from server-provided margins
		state.abstainThreshold = Number(slider.value);
		$("abstain-value").textContent = state.abstainThreshold.toFixed(3);
		renderResults();
	};
	$("sal-run").onclick = () => void runSaliency();
}

void bootstrap();
