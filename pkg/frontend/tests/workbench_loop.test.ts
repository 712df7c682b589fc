/** End-to-end logic checks of the edit loop against a mocked service:
 *  - one edit burst -> exactly one coalesced evaluate call
 *  - displayed accuracy/margins byte-equal the service body
 *  - the abstain slider path never touches the network
 */

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { EvaluationQueue } from "../src/coalescer.js";
import {
	chipStates,
	coveragePreview,
	displayedAccuracy,
	displayedMargins,
} from "../src/derive.js";
import { draftFromPromptSet, withEdit } from "../src/draft.js";
import type { PromptDraft } from "../src/draft.js";
import type { PromptSetDoc } from "../src/types.js";

const tier1: PromptSetDoc = {
	set_id: "tier1",
	tier: 1,
	description: "",
	revision: 0,
	prompts: {
		sitting: ["a photo of a person sitting"],
		standing: ["a photo of a person standing"],
		walking_running: ["a photo of a person walking or running"],
	},
};

/** Minimal stateful service double with call counting. */
function mockService() {
	const calls = { put: 0, evaluate: 0 };
	let revision = 0;
	// margins serialized the way Python would (note 1e-07)
	const evaluateBody =
		'{"ws_id":"ws-1","prompt_set_id":"tier1","prompt_set_revision":1,' +
		'"scores":[' +
		'{"image_id":"im1","similarities":{"sitting":0.4},"temperature":1.0,' +
		'"probabilities":{"sitting":0.6},"predicted":"sitting","margin":0.21,' +
		'"abstained":false,"prompt_set_id":"tier1","true_label":"sitting"},' +
		'{"image_id":"im2","similarities":{"sitting":0.1},"temperature":1.0,' +
		'"probabilities":{"sitting":0.4},"predicted":"standing","margin":1e-07,' +
		'"abstained":false,"prompt_set_id":"tier1","true_label":"sitting"}],' +
		'"failures":[],' +
		'"metrics":{"task":"multi","accuracy":0.5,"macro_precision":0.5,' +
		'"macro_recall":0.5,"macro_f1":0.5,"per_class_f1":{},"confusion":' +
		'{"labels":["sitting","standing","walking_running"],"counts":[[1,1,0],[0,0,0],[0,0,0]]},' +
		'"coverage":1.0,"n_evaluated":2,"n_abstained":0,"degenerate_classes":[]}}';

	const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
		if (url.includes("/api/promptsets/") && init?.method === "PUT") {
			calls.put += 1;
			revision += 1;
			const body = JSON.parse(String(init.body)) as { prompts: unknown };
			return new Response(
				JSON.stringify({
					set_id: "tier1",
					tier: 1,
					description: "",
					prompts: body.prompts,
					revision,
					lint_findings: [],
				}),
				{ status: 200 },
			);
		}
		if (url === "/api/evaluate") {
			calls.evaluate += 1;
			return new Response(evaluateBody, { status: 200 });
		}
		throw new Error(`unexpected request ${url}`);
	};
	return { calls, fetchFn };
}

function editLoop(api: ApiClient) {
	let current: { rawText: string; parsed: ReturnType<JSON["parse"]> } | null = null;
	let draft: PromptDraft = draftFromPromptSet(tier1);
	const queue = new EvaluationQueue<PromptDraft>(async (d) => {
		const saved = await api.putPromptSet(d.setId, {
			tier: d.tier,
			description: d.description,
			prompts: d.prompts,
			base_revision: d.baseRevision,
		});
		draft = { ...draft, baseRevision: saved.revision };
		current = await api.evaluate("ws-1", d.setId);
	});
	return {
		queue,
		edit(text: string) {
			draft = withEdit(draft, "sitting", 0, text);
			queue.submit(draft);
		},
		result: () => current,
	};
}

describe("workbench edit loop", () => {
	it("a single edit triggers exactly one evaluate call", async () => {
		const service = mockService();
		const loop = editLoop(new ApiClient("", service.fetchFn));
		loop.edit("a person seated with bent knees");
		await loop.queue.idle();
		expect(service.calls.evaluate).toBe(1);
		expect(service.calls.put).toBe(1);
	});

	it("rapid edits coalesce to the newest draft", async () => {
		const service = mockService();
		const loop = editLoop(new ApiClient("", service.fetchFn));
		loop.edit("v1");
		loop.edit("v2");
		loop.edit("v3");
		await loop.queue.idle();
		// first run picked up v1; v2/v3 collapsed into one follow-up
		expect(service.calls.evaluate).toBe(2);
	});

	it("displayed numbers are byte-equal to the response body", async () => {
		const service = mockService();
		const loop = editLoop(new ApiClient("", service.fetchFn));
		loop.edit("x");
		await loop.queue.idle();
		const result = loop.result()!;
		expect(displayedAccuracy(result.rawText)).toBe("0.5");
		expect(displayedMargins(result.rawText)).toEqual(["0.21", "1e-07"]);
		// JS re-serialization would have produced "1e-7": the raw span wins
		expect(String(result.parsed.scores[1].margin)).toBe("1e-7");
	});

	it("abstain slider recomputes display without any backend call", async () => {
		const service = mockService();
		const loop = editLoop(new ApiClient("", service.fetchFn));
		loop.edit("x");
		await loop.queue.idle();
		const before = { ...service.calls };
		const scores = loop.result()!.parsed.scores;

		expect(chipStates(scores, 0)).toEqual(["correct", "incorrect"]);
		expect(chipStates(scores, 0.001)).toEqual(["correct", "abstained"]);
		expect(chipStates(scores, 0.3)).toEqual(["abstained", "abstained"]);
		expect(coveragePreview(scores, 0.001)).toEqual({ total: 2, abstained: 1, covered: 1 });

		expect(service.calls).toEqual(before); // zero additional requests
	});
});
