/** Typed client for the workbench service API.
 *
 * Evaluate responses keep the raw body text alongside the parsed object:
 * every number the dashboard shows comes straight from that text, so the
 * display is byte-equal to what the service sent.
 */

import type {
	ClassName,
	ErrorBody,
	EvaluateResponse,
	ManifestResponse,
	PromptSetDoc,
	SaliencyResponse,
	TaskName,
} from "./types.js";

export class ApiError extends Error {
	constructor(
		readonly status: number,
		readonly code: string,
		message: string,
		readonly detail: unknown = null,
	) {
		super(message);
	}
}

export class RevisionConflictError extends ApiError {
	constructor(status: number, code: string, message: string, detail: unknown) {
		super(status, code, message, detail);
	}
}

export class BackendUnavailableError extends ApiError {}

export interface EvaluateResult {
	parsed: EvaluateResponse;
	rawText: string;
}

export interface PromptSetPut {
	tier: number;
	description: string;
	prompts: Record<ClassName, string[]>;
	base_revision: number | null;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
	constructor(
		private readonly baseUrl: string = "",
		private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
	) {}

	private async request(path: string, init?: RequestInit): Promise<{ json: unknown; raw: string }> {
		const resp = await this.fetchFn(this.baseUrl + path, init);
		const raw = await resp.text();
		if (!resp.ok) {
			let body: ErrorBody = { code: "unknown", message: raw, detail: null };
			try {
				body = JSON.parse(raw) as ErrorBody;
			} catch {
				// non-JSON error body: keep raw text as the message
			}
			if (resp.status === 409) {
				throw new RevisionConflictError(resp.status, body.code, body.message, body.detail);
			}
			if (resp.status === 503) {
				throw new BackendUnavailableError(resp.status, body.code, body.message, body.detail);
			}
			throw new ApiError(resp.status, body.code, body.message, body.detail);
		}
		return { json: JSON.parse(raw), raw };
	}

	async getManifest(): Promise<ManifestResponse> {
		return (await this.request("/api/manifest")).json as ManifestResponse;
	}

	async listPromptSets(): Promise<PromptSetDoc[]> {
		const body = (await this.request("/api/promptsets")).json as {
			promptsets: PromptSetDoc[];
		};
		return body.promptsets;
	}

	async getPromptSet(id: string): Promise<PromptSetDoc> {
		return (await this.request(`/api/promptsets/${encodeURIComponent(id)}`)).json as PromptSetDoc;
	}

	async putPromptSet(id: string, body: PromptSetPut): Promise<PromptSetDoc> {
		const out = await this.request(`/api/promptsets/${encodeURIComponent(id)}`, {
			method: "PUT",
			headers: { "content-type": "application/json" },
			body: JSON.stringify(body),
		});
		return out.json as PromptSetDoc;
	}

	async createWorkingSet(
		imageIds: string[],
		task: TaskName,
		temperature = 1.0,
		abstainMargin = 0.0,
	): Promise<string> {
		const out = await this.request("/api/workingsets", {
			method: "POST",
			headers: { "content-type": "application/json" },
			body: JSON.stringify({
				image_ids: imageIds,
				task,
				temperature,
				abstain_margin: abstainMargin,
			}),
		});
		return (out.json as { ws_id: string }).ws_id;
	}

	async evaluate(wsId: string, promptSetId: string): Promise<EvaluateResult> {
		const out = await this.request("/api/evaluate", {
			method: "POST",
			headers: { "content-type": "application/json" },
			body: JSON.stringify({ ws_id: wsId, prompt_set_id: promptSetId }),
		});
		return { parsed: out.json as EvaluateResponse, rawText: out.raw };
	}

	async saliency(
		imageId: string,
		promptSetId: string,
		className?: ClassName,
	): Promise<SaliencyResponse> {
		const params = new URLSearchParams({ image_id: imageId, promptset: promptSetId });
		if (className) params.set("class", className);
		return (await this.request(`/api/saliency?${params}`)).json as SaliencyResponse;
	}
}
